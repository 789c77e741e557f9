#include "blockpool/checks.hpp"

#include <gtest/gtest.h>

#include "blockpool/error.hpp"

namespace blockpool {
namespace {

TEST(ChecksTest, MaskPasses) {
  const CheckResult r = check_mask();
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(ChecksTest, EveryTranslationVariantIsLeakFree) {
  for (VariantName v : {VariantName::kSubword, VariantName::kChar, VariantName::kFixed,
                        VariantName::kBufferedFixed, VariantName::kWdd, VariantName::kSdd,
                        VariantName::kTwoStepSubword}) {
    const Model m(check_spec(v, "tiny"), 1);
    const CheckResult r = check_leak(m);
    EXPECT_TRUE(r.passed) << variant_name(v) << ": " << r.detail;
  }
}

TEST(ChecksTest, GradientCheckOnSmallSdd) {
  VariantSpec s = check_spec(VariantName::kSdd, "tiny");
  s.model.d_model = 8;
  s.model.n_heads = 2;
  s.model.d_ff = 12;
  s.down.d_char = 6;
  s.up.d_slice = 3;
  s.up.d_char_embed = 4;
  s.up.lstm_hidden = 6;
  Model m(s, 2);
  const CheckResult r = check_grad(m, 4);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(ChecksTest, UnknownPreset) { EXPECT_THROW(check_spec(VariantName::kSdd, "huge"), ArgumentError); }

}  // namespace
}  // namespace blockpool
