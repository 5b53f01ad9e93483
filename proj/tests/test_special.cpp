#include <gtest/gtest.h>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "qepdx/special.hpp"

namespace sp = qepdx::special;

TEST(Special, LogGammaMatchesReference) {
  for (double x : {1e-3, 0.1, 0.5, 1.0, 1.5, 2.0, 3.7, 10.0, 57.3, 500.0, 5000.5, 1e5}) {
    const double ref = boost::math::lgamma(x);
    EXPECT_NEAR(sp::log_gamma(x), ref, 1e-12 * std::max(1.0, std::abs(ref))) << x;
  }
}

TEST(Special, DigammaMatchesReference) {
  for (double x : {1e-3, 0.1, 0.5, 1.0, 1.4616321449683622, 2.5, 7.0, 10.0, 123.4, 4000.0}) {
    const double ref = boost::math::digamma(x);
    EXPECT_NEAR(sp::digamma(x), ref, 1e-12 * std::max(1.0, std::abs(ref))) << x;
  }
}

TEST(Special, ChiSquareEntropyOfTwoDegreesIsExponential) {
  // χ²(2) is Exp(1/2); its entropy is 1 + log 2.
  EXPECT_NEAR(sp::chi_square_entropy(2.0), 1.0 + std::log(2.0), 1e-13);
}

TEST(Special, RejectsNonPositive) {
  EXPECT_THROW(sp::log_gamma(0.0), std::invalid_argument);
  EXPECT_THROW(sp::digamma(-1.0), std::invalid_argument);
}
