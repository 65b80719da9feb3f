#include <doctest.h>

#include "snpforge/gradcheck.hpp"

using namespace snpforge;

TEST_CASE("every registered differentiable op passes finite differences") {
    for (const auto& op : grad_check_ops()) {
        CAPTURE(op);
        CHECK(grad_check(op, 42) < 1e-4);
        CHECK(grad_check(op, 1234) < 1e-4);
    }
}

TEST_CASE("conv1d gradient on a 3x8 input vs central finite differences") {
    CHECK(grad_check("conv1d", {{1, 3, 8}, {4, 3, 3}, {4}}, 11) < 1e-4);
}

TEST_CASE("attention gradient at the stated shapes") {
    CHECK(grad_check("attention", {{2, 4, 8}, {2, 4, 8}, {2, 4, 8}}, 7) < 1e-4);
}

TEST_CASE("group norm gradient at the stated shapes") {
    CHECK(grad_check("group_norm", {{2, 8, 16}, {8}, {8}}, 1) < 1e-4);
}

TEST_CASE("identity op has zero gradient error up to f64 rounding") {
    CHECK(grad_check("identity", 3) < 1e-9);
}

TEST_CASE("unsupported op kind is rejected") {
    CHECK_THROWS_AS((void)grad_check("no_such_op", 1), std::invalid_argument);
}
