#include "support/gradcheck_scenarios.hpp"

#include <doctest.h>

TEST_SUITE_BEGIN("gradcheck");

TEST_CASE("analytic gradients match central finite differences for every layer kind") {
    for (const auto& scenario : gradcheck::all_scenarios()) {
        INFO(scenario.name, ": worst ", scenario.report.worst);
        CHECK_MESSAGE(scenario.report.checked > 0, scenario.name);
        CHECK_MESSAGE(scenario.report.max_rel_err <= 1e-4,
                      scenario.name, " max_rel_err=", scenario.report.max_rel_err);
    }
}

TEST_SUITE_END();
