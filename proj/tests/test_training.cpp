#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include <oucr/oucr.hpp>

#include "testutil.hpp"

using namespace oucr;

namespace {

std::string temp_dir(const char* tag) {
  auto d = std::filesystem::temp_directory_path() / (std::string("oucr_train_") + tag);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d.string();
}

std::vector<Sample> tiny_set(int n, int hw = 16, std::uint64_t seed0 = 0) {
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) out.push_back(phantom_generate(hw, hw, seed0 + std::uint64_t(i), 1));
  return out;
}

TrainConfig tiny_train_cfg(int epochs) {
  TrainConfig tc;
  tc.max_epochs = epochs;
  tc.batch_size = 2;
  tc.seed = 5;
  tc.af = 4;
  return tc;
}

ModelConfig tiny_model_cfg() {
  ModelConfig mc;
  mc.base_channels = 2;
  mc.iterations = 1;
  return mc;
}

bool files_equal(const std::string& a, const std::string& b) {
  return read_file_bytes(a) == read_file_bytes(b);
}

}  // namespace

TEST_CASE("adam performs the textbook bias-corrected first step", "[training][adam]") {
  ParamSet<double> ps;
  Tensor<double> theta = Tensor<double>::zeros({1});
  theta.set_requires_grad();
  ps.add("w", theta);
  backward(sum(mul(theta, Tensor<double>::full({1}, 1.0))));  // grad = 1
  AdamState<double> st(ps, 0.9, 0.999, 1e-8);
  adam_step(ps, st, 0.1);
  // m_hat = 1, v_hat = 1 -> theta = -0.1 / (1 + 1e-8)
  CHECK(theta.data()[0] == Catch::Approx(-0.1 / (1.0 + 1e-8)).margin(1e-15));
  CHECK(st.t == 1);
}

TEST_CASE("adam with zero gradients leaves parameters alone", "[training][adam]") {
  ParamSet<double> ps;
  Tensor<double> theta = Tensor<double>::from_data({3}, {1, 2, 3});
  theta.set_requires_grad();
  ps.add("w", theta);
  AdamState<double> st(ps, 0.9, 0.999, 1e-8);
  adam_step(ps, st, 0.1);
  CHECK(theta.data() == std::vector<double>{1, 2, 3});
}

TEST_CASE("identical gradients update identically", "[training][adam]") {
  ParamSet<double> ps;
  Tensor<double> a = Tensor<double>::full({2}, 0.5);
  Tensor<double> b = Tensor<double>::full({2}, 0.5);
  a.set_requires_grad();
  b.set_requires_grad();
  ps.add("a", a);
  ps.add("b", b);
  backward(sum(add(scale(a, 2.0), scale(b, 2.0))));
  AdamState<double> st(ps, 0.9, 0.999, 1e-8);
  adam_step(ps, st, 0.05);
  CHECK(a.data() == b.data());
}

TEST_CASE("adam names the parameter missing its gradient", "[training][adam][errors]") {
  ParamSet<double> ps;
  Tensor<double> w = Tensor<double>::zeros({2});
  ps.add("lonely", w);  // never marked requires_grad
  AdamState<double> st(ps, 0.9, 0.999, 1e-8);
  CHECK_THROWS_WITH(adam_step(ps, st, 0.1), Catch::Matchers::ContainsSubstring("lonely"));
}

TEST_CASE("lr schedule steps down every five epochs", "[training][schedule]") {
  TrainConfig cfg;
  CHECK(lr_schedule(0, cfg) == 1.5e-4);
  CHECK(lr_schedule(4, cfg) == 1.5e-4);
  CHECK(lr_schedule(5, cfg) == Catch::Approx(1.35e-4).margin(1e-19));
  CHECK(lr_schedule(49, cfg) == Catch::Approx(1.5e-4 * std::pow(0.9, 9)).margin(1e-19));
  // Non-increasing, piecewise constant with period 5.
  for (int e = 1; e < 50; ++e) {
    CHECK(lr_schedule(e, cfg) <= lr_schedule(e - 1, cfg));
    if (e % 5 != 0) CHECK(lr_schedule(e, cfg) == lr_schedule(e - 1, cfg));
  }
  CHECK_THROWS_AS(lr_schedule(-1, cfg), ValueError);
}

TEST_CASE("global norm clipping rescales gradients", "[training][clip]") {
  ParamSet<double> ps;
  Tensor<double> w = Tensor<double>::full({4}, 1.0);
  w.set_requires_grad();
  ps.add("w", w);
  backward(scale(sum(w), 10.0));  // grad = 10 each, norm 20
  const double norm = clip_global_norm(ps, 1.0);
  CHECK(norm == Catch::Approx(20.0));
  CHECK(testutil::l2_norm(*w.grad()) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("full-mask training is already converged at epoch zero", "[training]") {
  const auto set = tiny_set(1);
  const Mask fm = testutil::full_mask(16, 16);
  const std::string dir = temp_dir("fullmask");
  TrainConfig tc = tiny_train_cfg(1);
  const TrainResult res = train<double>(tiny_model_cfg(), set, {}, tc, dir, false, &fm);
  REQUIRE(res.log.size() == 1);
  CHECK(res.log[0].train_l1 < 1e-9);
}

TEST_CASE("same seed twice gives the identical epoch-zero loss", "[training][determinism]") {
  const auto set = tiny_set(4);
  const auto val = tiny_set(2, 16, 100);
  TrainConfig tc = tiny_train_cfg(1);
  const TrainResult a = train<double>(tiny_model_cfg(), set, val, tc, temp_dir("det_a"));
  const TrainResult b = train<double>(tiny_model_cfg(), set, val, tc, temp_dir("det_b"));
  CHECK(a.log[0].train_l1 == b.log[0].train_l1);
  CHECK(a.log[0].val_psnr == b.log[0].val_psnr);
}

TEST_CASE("three epochs replay bit-exactly and resume seamlessly", "[training][determinism]") {
  const auto set = tiny_set(4);
  const auto val = tiny_set(2, 16, 100);

  const std::string d_full = temp_dir("replay_full");
  TrainConfig tc3 = tiny_train_cfg(3);
  train<double>(tiny_model_cfg(), set, val, tc3, d_full);

  const std::string d_again = temp_dir("replay_again");
  train<double>(tiny_model_cfg(), set, val, tc3, d_again);
  CHECK(files_equal(d_full + "/ckpt_last.bin", d_again + "/ckpt_last.bin"));

  // Stop after two epochs, then resume to three: identical bytes again.
  const std::string d_resume = temp_dir("replay_resume");
  TrainConfig tc2 = tiny_train_cfg(2);
  train<double>(tiny_model_cfg(), set, val, tc2, d_resume);
  train<double>(tiny_model_cfg(), set, val, tc3, d_resume, /*resume=*/true);
  CHECK(files_equal(d_full + "/ckpt_last.bin", d_resume + "/ckpt_last.bin"));
  CHECK(files_equal(d_full + "/optim_last.bin", d_resume + "/optim_last.bin"));
}

TEST_CASE("checkpoints round trip bit-exactly", "[training][checkpoint]") {
  ModelConfig mc = tiny_model_cfg();
  OucrParams<double> params = build_model<double>(mc, 3);
  ParamSet<double> ps = named_params(params);
  const std::string dir = temp_dir("ckpt");
  nlohmann::json meta;
  meta["note"] = 1;
  checkpoint_save(ps.entries, meta, dir + "/a.json", dir + "/a.bin");
  Checkpoint<double> back = checkpoint_read<double>(dir + "/a.json", dir + "/a.bin");
  for (const auto& [name, t] : ps.entries) CHECK(back.tensors.at(name).data() == t.data());

  // Loading into a mismatching architecture fails loudly.
  ModelConfig other = tiny_model_cfg();
  other.base_channels = 4;
  OucrParams<double> params2 = build_model<double>(other, 3);
  ParamSet<double> ps2 = named_params(params2);
  CHECK_THROWS_AS(checkpoint_load_into(ps2, dir + "/a.json", dir + "/a.bin"), DataError);

  // dtype tags are enforced.
  CHECK_THROWS_AS(checkpoint_read<float>(dir + "/a.json", dir + "/a.bin"), DataError);
}

TEST_CASE("non-finite losses abort with a diagnostic", "[training][errors]") {
  const auto set = tiny_set(4);
  TrainConfig tc = tiny_train_cfg(4);
  tc.lr_init = 1e200;  // the step after the first batch overflows the forward pass
  tc.clip_norm = 0;
  const std::string dir = temp_dir("blowup");
  CHECK_THROWS_MATCHES(train<double>(tiny_model_cfg(), set, {}, tc, dir), NumericError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("epoch") &&
                           Catch::Matchers::ContainsSubstring("parameter l2 norms")));
}

TEST_CASE("training rejects bad inputs", "[training][errors]") {
  TrainConfig tc = tiny_train_cfg(1);
  CHECK_THROWS_AS(train<double>(tiny_model_cfg(), {}, {}, tc, temp_dir("bad1")), ValueError);
  Sample odd18;
  odd18.id = "odd";
  odd18.norm_scale = 1.0;
  odd18.target = Tensor<double>::full({2, 18, 18}, 0.1);
  CHECK_THROWS_AS(train<double>(tiny_model_cfg(), {odd18}, {}, tc, temp_dir("bad2")), ValueError);
  TrainConfig broke = tc;
  broke.lr_decay = 1.5;
  CHECK_THROWS_AS(train<double>(tiny_model_cfg(), tiny_set(1), {}, broke, temp_dir("bad3")),
                  ValueError);
}

TEST_CASE("float32 training runs and logs finite losses", "[training][float32]") {
  const auto set = tiny_set(2);
  TrainConfig tc = tiny_train_cfg(1);
  const TrainResult res = train<float>(tiny_model_cfg(), set, {}, tc, temp_dir("f32"));
  REQUIRE(res.log.size() == 1);
  CHECK(std::isfinite(res.log[0].train_l1));
}

TEST_CASE("four phantoms overfit past 40 dB", "[training][.slow][slow]") {
  const auto set = tiny_set(4, 32, 7);
  ModelConfig mc;
  mc.base_channels = 8;
  mc.iterations = 3;
  TrainConfig tc;
  tc.max_epochs = 200;
  tc.batch_size = 4;
  tc.seed = 1;
  tc.af = 4;
  tc.lr_init = 1e-3;
  tc.lr_decay = 1.0;  // constant rate for the overfit probe
  const std::string dir = temp_dir("overfit");
  // Validate on the training set itself: this probes pure capacity.
  const TrainResult res = train<double>(mc, set, set, tc, dir);
  CHECK(res.best_val_psnr > 40.0);
}
