#include <catch2/catch_amalgamated.hpp>

#include "hyperfield/adam.hpp"
#include "hyperfield/grad_check.hpp"
#include "hyperfield/mlp.hpp"
#include "hyperfield/param_store.hpp"
#include "hyperfield/tape.hpp"

#include <filesystem>

using namespace hyperfield;
using Catch::Approx;

namespace {

Mat<double> random_mat(int64_t r, int64_t c, Rng& rng, double scale = 1.0) {
  Mat<double> m(r, c);
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

// numeric d(loss)/d(entry) for an arbitrary graph over one param tensor
double fd_entry(const LossBuilder<double>& build, ParamTensor<double>& p, int64_t r, int64_t c,
                double h = 1e-6) {
  double saved = p.values(r, c);
  p.values(r, c) = saved + h;
  double lp = eval_loss(build);
  p.values(r, c) = saved - h;
  double lm = eval_loss(build);
  p.values(r, c) = saved;
  return (lp - lm) / (2 * h);
}

}  // namespace

TEST_CASE("elementwise and structural ops match finite differences") {
  Rng rng(7);
  ParamStore<double> store;
  auto& a = store.add("a", {4, 5});
  auto& b = store.add("b", {4, 5});
  a.values = random_mat(4, 5, rng, 0.8).array() + 1.5;  // keep log/sqrt/div well-posed
  b.values = random_mat(4, 5, rng, 0.5).array() + 1.2;

  struct Case {
    const char* name;
    LossBuilder<double> build;
  };
  std::vector<Case> cases;
  auto make = [&](const char* name, std::function<Value<double>(Tape<double>&, Value<double>,
                                                                Value<double>)> body) {
    cases.push_back({name, [&store, body](Tape<double>& t) {
                       Value<double> va = t.param(store.at("a"));
                       Value<double> vb = t.param(store.at("b"));
                       return mean_all(body(t, va, vb));
                     }});
  };
  make("add", [](Tape<double>&, auto x, auto y) { return add(x, y); });
  make("sub", [](Tape<double>&, auto x, auto y) { return sub(x, y); });
  make("mul", [](Tape<double>&, auto x, auto y) { return mul(x, y); });
  make("div", [](Tape<double>&, auto x, auto y) { return div(x, y); });
  make("relu", [](Tape<double>&, auto x, auto y) { return relu(sub(x, y)); });
  make("sin", [](Tape<double>&, auto x, auto) { return sin(x); });
  make("cos", [](Tape<double>&, auto x, auto) { return cos(x); });
  make("sigmoid", [](Tape<double>&, auto x, auto) { return sigmoid(x); });
  make("softplus", [](Tape<double>&, auto x, auto) { return softplus(x); });
  make("exp", [](Tape<double>&, auto x, auto) { return exp(scale(x, 0.3)); });
  make("log", [](Tape<double>&, auto x, auto) { return log(x); });
  make("sqrt", [](Tape<double>&, auto x, auto) { return sqrt(x); });
  make("scale+add_scalar", [](Tape<double>&, auto x, auto) {
    return add_scalar(scale(x, -2.5), 0.7);
  });
  make("concat+col_block", [](Tape<double>& t, auto x, auto y) {
    auto cc = concat_cols<double>({x, y, x});
    return mul(col_block(cc, 3, 5), col_block(cc, 10, 5));
  });
  make("gather", [](Tape<double>&, auto x, auto) {
    return gather_rows(x, {2, 0, 2, 3, 1, 2});
  });
  make("sum_all", [](Tape<double>&, auto x, auto y) {
    auto s = sum_all(mul(x, y));
    return s;
  });

  for (auto& c : cases) {
    INFO(c.name);
    compute_grads(c.build, store);
    for (auto* p : {&a, &b}) {
      for (int64_t k = 0; k < 6; ++k) {
        int64_t r = int64_t(rng.next_u64() % 4), cc = int64_t(rng.next_u64() % 5);
        double fd = fd_entry(c.build, *p, r, cc);
        REQUIRE_THAT(p->grad(r, cc), Catch::Matchers::WithinAbs(fd, 1e-6));
      }
    }
  }
}

TEST_CASE("linear layer gradients") {
  Rng rng(3);
  ParamStore<double> store;
  auto& w = store.add("w", {3, 4});
  auto& bias = store.add("b", {3});
  w.values = random_mat(3, 4, rng);
  bias.values = random_mat(3, 1, rng);
  Mat<double> x = random_mat(6, 4, rng);

  LossBuilder<double> build = [&](Tape<double>& t) {
    return mean_all(linear(t.constant(x), t.param(w), t.param(bias)));
  };
  compute_grads(build, store);
  REQUIRE(max_fd_rel_error(build, store, 1e-6, 0, 1) < 1e-8);
}

TEST_CASE("backward requires a scalar loss") {
  ParamStore<double> store;
  auto& a = store.add("a", {2, 2});
  a.values.setOnes();
  Tape<double> t;
  Value<double> v = t.param(a);
  REQUIRE_THROWS_AS(t.backward(v), ContractError);
}

TEST_CASE("backward linearity and accumulation") {
  Rng rng(11);
  ParamStore<double> store;
  auto& a = store.add("a", {3, 3});
  a.values = random_mat(3, 3, rng);

  // grad of k*loss is k * grad of loss: bit-exact for power-of-two k, one
  // rounding otherwise
  auto grads_of = [&](double k) {
    store.zero_grads();
    Tape<double> t;
    Value<double> loss = scale(mean_all(mul(t.param(a), t.param(a))), k);
    t.backward(loss);
    t.merge_param_grads();
    return Mat<double>(a.grad);
  };
  Mat<double> g1 = grads_of(1.0);
  Mat<double> g4 = grads_of(4.0);
  REQUIRE((g4 - 4.0 * g1).cwiseAbs().maxCoeff() == 0.0);
  Mat<double> g3 = grads_of(3.0);
  REQUIRE((g3 - 3.0 * g1).cwiseAbs().maxCoeff() < 1e-15);

  // two backward passes accumulate additively
  store.zero_grads();
  Tape<double> t;
  Value<double> loss = mean_all(mul(t.param(a), t.param(a)));
  t.backward(loss);
  t.backward(loss);
  t.merge_param_grads();
  REQUIRE((Mat<double>(a.grad) - 2.0 * g1).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("loss = sum of tensor gives all-ones gradient") {
  ParamStore<double> store;
  auto& a = store.add("a", {4, 2});
  a.values.setRandom();
  compute_grads<double>([&](Tape<double>& t) { return sum_all(t.param(a)); }, store);
  REQUIRE((a.grad.array() == 1.0).all());
}

TEST_CASE("loss = |Wx|^2 has gradient 2(Wx)x^T") {
  Rng rng(5);
  ParamStore<double> store;
  auto& w = store.add("w", {3, 4});
  w.values = random_mat(3, 4, rng);
  Mat<double> x = random_mat(1, 4, rng);  // row vector
  compute_grads<double>(
      [&](Tape<double>& t) {
        Value<double> y = linear_nt(t.constant(x), t.param(w));
        return sum_all(mul(y, y));
      },
      store);
  Mat<double> expected = 2.0 * (w.values * x.transpose()) * x;
  REQUIRE((w.grad - expected).cwiseAbs().maxCoeff() < 1e-12);
}

// ---- MLP ----------------------------------------------------------------

TEST_CASE("mlp_forward: all-zero weights give all-zero output") {
  ParamStore<double> store;
  MLPSpec spec{3, 2, 8, {1}, 4};
  init_mlp_params<double>(store, "net", spec, 1);
  for (size_t i = 0; i < store.size(); ++i) store[i].values.setZero();
  Tape<double> t;
  Mat<double> x(2, 3);
  x << 0.3, -1.2, 2.0, 0.0, 0.5, -0.7;
  Value<double> y = mlp_forward(t, store, "net", spec, t.constant(x));
  REQUIRE(y.val().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identity affine layer reproduces its input") {
  ParamStore<double> store;
  MLPSpec spec{2, 1, 2, {}, 2};
  spec.activations = {Activation::None};
  init_mlp_params<double>(store, "net", spec, 1);
  store.at("net.l0.w").values = Mat<double>::Identity(2, 2);
  store.at("net.l0.b").values.setZero();
  store.at("net.out.w").values = Mat<double>::Identity(2, 2);
  store.at("net.out.b").values.setZero();
  Tape<double> t;
  Mat<double> x(1, 2);
  x << 1.0, 2.0;
  Value<double> y = mlp_forward(t, store, "net", spec, t.constant(x));
  REQUIRE(y.val()(0, 0) == Approx(1.0));
  REQUIRE(y.val()(0, 1) == Approx(2.0));
}

TEST_CASE("random 2-layer relu net matches a dense-algebra oracle") {
  ParamStore<double> store;
  MLPSpec spec{3, 2, 16, {}, 5};
  init_mlp_params<double>(store, "net", spec, 42);
  Rng rng(9);
  Mat<double> x = random_mat(4, 3, rng);

  Tape<double> t;
  Value<double> y = mlp_forward(t, store, "net", spec, t.constant(x));

  // independent evaluation with plain Eigen products
  auto lw = [&](const std::string& n) { return store.at(n).values; };
  Mat<double> h = (x * lw("net.l0.w").transpose()).rowwise() +
                  lw("net.l0.b").col(0).transpose();
  h = h.cwiseMax(0.0);
  h = (h * lw("net.l1.w").transpose()).rowwise() + lw("net.l1.b").col(0).transpose();
  h = h.cwiseMax(0.0);
  Mat<double> out = (h * lw("net.out.w").transpose()).rowwise() +
                    lw("net.out.b").col(0).transpose();
  REQUIRE((y.val() - out).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mlp input dimension mismatch names the layer") {
  ParamStore<double> store;
  MLPSpec spec{3, 1, 4, {}, 1};
  init_mlp_params<double>(store, "net", spec, 0);
  Tape<double> t;
  try {
    mlp_forward(t, store, "net", spec, t.constant(Mat<double>::Zero(1, 5)));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    REQUIRE(std::string(e.what()).find("net") != std::string::npos);
    REQUIRE(std::string(e.what()).find("layer 0") != std::string::npos);
  }
}

TEST_CASE("skip layers concatenate the input") {
  ParamStore<double> store;
  MLPSpec spec{2, 3, 4, {2}, 1};
  init_mlp_params<double>(store, "net", spec, 0);
  REQUIRE(store.at("net.l2.w").values.cols() == 6);  // width + input_dim
  REQUIRE(store.at("net.l1.w").values.cols() == 4);
}

// ---- Adam ------------------------------------------------------------------

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  ParamStore<double> store;
  auto& a = store.add("a", {3, 3});
  a.values.setRandom();
  Mat<double> before = a.values;
  AdamState<double> adam;
  adam_step(store, adam, 1e-3);
  REQUIRE((a.values - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam: first unit-gradient step moves by about lr") {
  ParamStore<double> store;
  auto& a = store.add("a", {1});
  a.values(0, 0) = 0.5;
  a.grad(0, 0) = 1.0;
  AdamState<double> adam;
  adam_step(store, adam, 1e-3);
  REQUIRE(a.values(0, 0) == Approx(0.5 - 1e-3).epsilon(1e-6));
  REQUIRE(a.grad(0, 0) == 0.0);  // zeroed after the step
}

TEST_CASE("adam: minimizes (p-3)^2 from p=0") {
  // scalar convergence oracle: with lr 1e-3 the |p-3| < 1e-3 band is reached
  // at step 6472 (second-moment accumulation slows the final approach)
  ParamStore<double> store;
  auto& p = store.add("p", {1});
  p.values(0, 0) = 0.0;
  AdamState<double> adam;
  int reached = -1;
  for (int i = 0; i < 6500; ++i) {
    p.grad(0, 0) = 2.0 * (p.values(0, 0) - 3.0);
    adam_step(store, adam, 1e-3);
    if (std::abs(p.values(0, 0) - 3.0) < 1e-3) {
      reached = i;
      break;
    }
  }
  REQUIRE(reached == 6472);
}

TEST_CASE("adam aborts on non-finite gradients, naming the tensor") {
  ParamStore<double> store;
  store.add("fine", {2});
  auto& bad = store.add("broken", {2});
  bad.grad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  AdamState<double> adam;
  try {
    adam_step(store, adam, 1e-3);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    REQUIRE(std::string(e.what()).find("broken") != std::string::npos);
  }
}

TEST_CASE("lr_schedule endpoints and midpoint") {
  REQUIRE(lr_schedule<double>(0, 250000, 1e-3, 1e-4) == 1e-3);
  REQUIRE(lr_schedule<double>(250000, 250000, 1e-3, 1e-4) == 1e-4);
  REQUIRE(lr_schedule<double>(500, 1000, 1e-3, 1e-4) ==
          Approx(std::sqrt(1e-3 * 1e-4)).epsilon(1e-12));
  REQUIRE_THROWS_AS(lr_schedule<double>(0, 10, 0.0, 1e-4), ConfigError);
  REQUIRE_THROWS_AS(lr_schedule<double>(0, 10, 1e-3, -1.0), ConfigError);
  REQUIRE_THROWS_AS(lr_schedule<double>(11, 10, 1e-3, 1e-4), ContractError);
}

// ---- grad_check harness ------------------------------------------------------

TEST_CASE("grad_check: pure linear model is exact") {
  Rng rng(2);
  ParamStore<double> store;
  auto& w = store.add("w", {4, 4});
  w.values = random_mat(4, 4, rng);
  Mat<double> x = random_mat(8, 4, rng);
  LossBuilder<double> build = [&](Tape<double>& t) {
    return mean_all(linear_nt(t.constant(x), t.param(w)));
  };
  REQUIRE(grad_check(build, store, 1e-4) < 1e-10);
}

TEST_CASE("grad_check: sine-encoded mlp under 1e-4") {
  ParamStore<double> store;
  MLPSpec spec{6, 3, 12, {2}, 1};
  init_mlp_params<double>(store, "net", spec, 7);
  Rng rng(13);
  Mat<double> x = random_mat(10, 3, rng);
  LossBuilder<double> build = [&](Tape<double>& t) {
    Value<double> raw = t.constant(x);
    Value<double> enc = concat_cols<double>({sin(raw), cos(scale(raw, 2.0))});
    Value<double> y = mlp_forward(t, store, "net", spec, enc);
    return mean_all(mul(y, y));
  };
  REQUIRE(grad_check(build, store, 1e-4) < 1e-4);
}

TEST_CASE("grad_check: a corrupted gradient is caught") {
  ParamStore<double> store;
  auto& w = store.add("w", {3, 3});
  w.values.setRandom();
  Mat<double> x = Mat<double>::Random(3, 3);
  LossBuilder<double> build = [&](Tape<double>& t) {
    return mean_all(mul(linear_nt(t.constant(x), t.param(w)),
                        linear_nt(t.constant(x), t.param(w))));
  };
  compute_grads(build, store);
  w.grad(1, 1) *= 2.0;  // sabotage
  REQUIRE(max_fd_rel_error(build, store, 1e-4, 0, 1) > 0.1);
}

// ---- determinism & checkpoints ------------------------------------------------

namespace {

// toy training run: fit a small mlp to a fixed target with adam
ParamStore<double> toy_run(int steps) {
  ParamStore<double> store;
  MLPSpec spec{2, 2, 8, {}, 2};
  init_mlp_params<double>(store, "net", spec, 99);
  Rng rng(1234);
  Mat<double> x = random_mat(16, 2, rng);
  Mat<double> target = random_mat(16, 2, rng);
  AdamState<double> adam;
  for (int i = 0; i < steps; ++i) {
    Tape<double> t;
    Value<double> d = sub(mlp_forward(t, store, "net", spec, t.constant(x)), t.constant(target));
    Value<double> loss = mean_all(mul(d, d));
    t.backward(loss);
    t.merge_param_grads();
    adam_step(store, adam, 1e-3);
  }
  return store;
}

}  // namespace

TEST_CASE("fixed seed training is bit-identical across runs") {
  ParamStore<double> s1 = toy_run(50);
  ParamStore<double> s2 = toy_run(50);
  REQUIRE(s1.size() == s2.size());
  for (size_t i = 0; i < s1.size(); ++i) {
    REQUIRE(s1[i].name == s2[i].name);
    REQUIRE(std::memcmp(s1[i].values.data(), s2[i].values.data(),
                        sizeof(double) * size_t(s1[i].values.size())) == 0);
  }
}

TEST_CASE("checkpoint round-trip restores values, grads, and moments exactly") {
  ParamStore<double> store;
  auto& a = store.add("alpha", {3, 2});
  auto& b = store.add("beta", {4});
  Rng rng(21);
  a.values = random_mat(3, 2, rng);
  a.grad = random_mat(3, 2, rng);
  b.values = random_mat(4, 1, rng);
  CheckpointExtras<double> ex;
  ex.moments["alpha.m"] = random_mat(3, 2, rng);
  ex.moments["alpha.v"] = random_mat(3, 2, rng).cwiseAbs();
  ex.adam_step = 17;
  ex.train_step = 321;

  auto path = std::filesystem::temp_directory_path() / "hypf_roundtrip.hypf";
  save_checkpoint(path.string(), store, &ex);

  ParamStore<double> loaded;
  loaded.add("alpha", {3, 2});
  loaded.add("beta", {4});
  CheckpointExtras<double> ex2 = load_checkpoint(path.string(), loaded);
  REQUIRE((loaded.at("alpha").values - a.values).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((loaded.at("alpha").grad - a.grad).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((loaded.at("beta").values - b.values).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((ex2.moments.at("alpha.m") - ex.moments.at("alpha.m")).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(ex2.adam_step == 17);
  REQUIRE(ex2.train_step == 321);

  // header magic
  std::ifstream is(path, std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  REQUIRE(std::string(magic, 4) == "HYPF");
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects unknown tensors and bad magic") {
  ParamStore<double> store;
  store.add("a", {2});
  auto path = std::filesystem::temp_directory_path() / "hypf_bad.hypf";
  save_checkpoint(path.string(), store);
  ParamStore<double> other;
  other.add("b", {2});
  REQUIRE_THROWS_AS(load_checkpoint(path.string(), other), IoError);
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE";
  }
  REQUIRE_THROWS_AS(load_checkpoint(path.string(), store), IoError);
  std::filesystem::remove(path);
}
