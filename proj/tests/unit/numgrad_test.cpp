#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "helpers.hpp"
#include "profchat/errors.hpp"
#include "profchat/numgrad/grad_check.hpp"

using namespace profchat;
using namespace profchat::numgrad;
using testing::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Central differences on `param` alone, for cross-checking grad_check itself.
std::vector<double> numeric_grad(const std::function<double()>& f, Tensor& param, double eps) {
  std::vector<double> out;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double keep = param[i];
    param.mutable_data()[i] = keep + eps;
    const double up = f();
    param.mutable_data()[i] = keep - eps;
    const double down = f();
    param.mutable_data()[i] = keep;
    out.push_back((up - down) / (2 * eps));
  }
  return out;
}

// Checks d/dinputs of sum(op(inputs) * W) for a fixed random W.
double op_grad_error(const std::function<Tensor(Tape&, std::vector<Tensor>&)>& op,
                     std::vector<Tensor> inputs, Rng& rng) {
  Tensor weights;
  auto loss = [&](Tape& tape) {
    Tensor out = op(tape, inputs);
    if (!weights.defined()) weights = random_tensor(rng, out.shape(), -2.0, 2.0, false);
    return tape.sum(tape.mul(out, weights));
  };
  std::vector<NamedTensor> named;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    named.push_back({"in" + std::to_string(i), inputs[i]});
  return grad_check(loss, named).max_relative_error;
}

}  // namespace

TEST_CASE("matmul examples") {
  Tape tape;
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(values(tape.matmul(eye, m)) == std::vector<double>{1, 2, 3, 4});
  const Tensor r = tape.matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
  CHECK(r.shape() == Shape{1, 1});
  CHECK(r[0] == 11.0);
  CHECK_THROWS_AS(tape.matmul(m, Tensor::from({3, 1}, {1, 2, 3})), DimensionError);
}

TEST_CASE("gradient of sum(A B) matches central differences") {
  Rng rng(3);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor b = random_tensor(rng, {4, 2}, -1, 1, false);
  Tape tape;
  tape.backward(tape.sum(tape.matmul(a, b)));
  const std::vector<double> analytic = a.grad();
  auto f = [&] {
    Tape t(Tape::Mode::kNoGrad);
    return t.sum(t.matmul(a, b)).item();
  };
  const std::vector<double> numeric = numeric_grad(f, a, 1e-5);
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-12});
    CHECK(std::abs(analytic[i] - numeric[i]) / denom < 1e-7);
  }
  // The analytic gradient is the row sums of B broadcast down the rows.
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(analytic[r * 4 + c] == doctest::Approx(b.at(c, 0) + b.at(c, 1)).epsilon(1e-12));
}

TEST_CASE("softmax examples") {
  Tape tape;
  auto s = tape.softmax(Tensor::vector({0, 0}));
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));
  auto big = tape.softmax(Tensor::vector({1000, 1000}));
  CHECK(big[0] == doctest::Approx(0.5));
  CHECK(testing::all_finite(big));
  auto logs = tape.softmax(Tensor::vector({std::log(1.0), std::log(2.0), std::log(3.0)}));
  CHECK(logs[0] == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(logs[1] == doctest::Approx(2.0 / 6).epsilon(1e-12));
  CHECK(logs[2] == doctest::Approx(3.0 / 6).epsilon(1e-12));
  CHECK_THROWS_AS(tape.softmax(Tensor::vector({})), DomainError);
}

TEST_CASE("elementwise examples") {
  Tape tape;
  CHECK(tape.sigmoid(Tensor::scalar(0)).item() == 0.5);
  CHECK(tape.tanh(Tensor::scalar(0)).item() == 0.0);
  const Tensor c = tape.concat({Tensor::vector({1, 2}), Tensor::vector({3})});
  CHECK(values(c) == std::vector<double>{1, 2, 3});
  CHECK_THROWS_AS(tape.add(Tensor::vector({1, 2}), Tensor::vector({1})), DimensionError);
}

TEST_CASE("cross entropy examples") {
  Tape tape;
  CHECK(tape.cross_entropy(Tensor::vector({2, 2, 2, 2}), 1).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(tape.cross_entropy(Tensor::vector({30, -30, -30}), 0).item() < 1e-20);
  CHECK_THROWS_AS(tape.cross_entropy(Tensor::vector({1, 2}), 2), IndexError);
  CHECK(tape.sigmoid_cross_entropy(Tensor::vector({0}), 1).item() ==
        doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(tape.sigmoid_cross_entropy(Tensor::vector({0}), 2), IndexError);

  Rng rng(5);
  Tensor logits = random_tensor(rng, {6}, -3, 3);
  std::vector<NamedTensor> p{{"logits", logits}};
  auto loss = [&](Tape& t) { return t.cross_entropy(logits, 4); };
  CHECK(grad_check(loss, p).max_relative_error < 1e-6);
}

TEST_CASE("backward examples") {
  Tensor w = Tensor::scalar(3.0, true);
  {
    Tape tape;
    tape.backward(tape.mul(w, w));
  }
  CHECK(w.grad()[0] == doctest::Approx(6.0));

  Tensor v = Tensor::vector({1, -2, 5}, true);
  {
    Tape tape;
    tape.backward(tape.sum(v));
  }
  CHECK(v.grad() == std::vector<double>{1, 1, 1});

  Tape tape;
  Tensor loss = tape.sum(v);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), ContractError);
  Tape other;
  CHECK_THROWS_AS(other.backward(other.mul(v, v)), ContractError);
}

TEST_CASE("grads accumulate across tapes until zeroed") {
  Tensor w = Tensor::scalar(2.0, true);
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(tape.scale(w, 3.0));
  }
  CHECK(w.grad()[0] == doctest::Approx(6.0));
  w.zero_grad();
  CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("no-grad tape records nothing") {
  Tensor w = Tensor::vector({1, 2}, true);
  Tape tape(Tape::Mode::kNoGrad);
  Tensor y = tape.sum(tape.mul(w, w));
  CHECK(tape.size() == 0);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.item() == 5.0);
}

TEST_CASE("composite GRU step gradient matches central differences") {
  Rng rng(11);
  const std::size_t H = 3, X = 2;
  Tensor w_x = random_tensor(rng, {3 * H, X});
  Tensor u_rz = random_tensor(rng, {2 * H, H});
  Tensor u_n = random_tensor(rng, {H, H});
  Tensor b = random_tensor(rng, {3 * H});
  const Tensor x = random_tensor(rng, {X}, -1, 1, false);
  const Tensor h = random_tensor(rng, {H}, -1, 1, false);
  auto loss = [&](Tape& t) {
    Tensor gx = t.add(t.matvec(w_x, x), b);
    Tensor gh = t.matvec(u_rz, h);
    Tensor r = t.sigmoid(t.add(t.slice(gx, 0, H), t.slice(gh, 0, H)));
    Tensor z = t.sigmoid(t.add(t.slice(gx, H, H), t.slice(gh, H, H)));
    Tensor n = t.tanh(t.add(t.slice(gx, 2 * H, H), t.matvec(u_n, t.mul(r, h))));
    Tensor next = t.add(h, t.mul(z, t.sub(n, h)));
    return t.cross_entropy(next, 1);
  };
  std::vector<NamedTensor> p{{"w_x", w_x}, {"u_rz", u_rz}, {"u_n", u_n}, {"b", b}};
  CHECK(grad_check(loss, p).max_relative_error < 1e-6);
}

TEST_CASE("grad_check on a quadratic probe") {
  Tensor w = Tensor::vector({0.5, -1.5, 2.0}, true);
  std::vector<NamedTensor> p{{"w", w}};
  auto loss = [&](Tape& t) { return t.dot(w, w); };
  const GradCheckResult r = grad_check(loss, p);
  CHECK(r.max_relative_error < 1e-9);
  CHECK(r.entries_checked == 3);
  CHECK(kDefaultGradCheckEps == 1e-5);
  CHECK(values(w) == std::vector<double>{0.5, -1.5, 2.0});
  CHECK_THROWS_AS(grad_check(loss, p, 0.0), DomainError);
  auto not_scalar = [&](Tape& t) { return t.mul(w, w); };
  CHECK_THROWS_AS(grad_check(not_scalar, p), ContractError);
}

TEST_CASE("property: softmax is a shift-invariant distribution") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.index(8);
    Tensor x = random_tensor(rng, {n}, -20, 20, false);
    const double shift = rng.uniform(-50, 50);
    std::vector<double> shifted(x.data().begin(), x.data().end());
    for (double& v : shifted) v += shift;
    Tape tape;
    const Tensor a = tape.softmax(x);
    const Tensor b = tape.softmax(Tensor::vector(shifted));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += a[i];
      CHECK(a[i] > 0.0);
      CHECK(a[i] <= 1.0);
      CHECK(std::abs(a[i] - b[i]) < 1e-9);
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("property: every differentiable op agrees with central differences") {
  using Inputs = std::vector<Tensor>;
  struct Case {
    const char* name;
    std::function<Inputs(Rng&)> make;
    std::function<Tensor(Tape&, Inputs&)> op;
  };
  const std::vector<Case> cases = {
      {"matmul", [](Rng& r) { return Inputs{random_tensor(r, {2, 3}), random_tensor(r, {3, 2})}; },
       [](Tape& t, Inputs& in) { return t.matmul(in[0], in[1]); }},
      {"matvec", [](Rng& r) { return Inputs{random_tensor(r, {3, 4}), random_tensor(r, {4})}; },
       [](Tape& t, Inputs& in) { return t.matvec(in[0], in[1]); }},
      {"transpose", [](Rng& r) { return Inputs{random_tensor(r, {2, 3})}; },
       [](Tape& t, Inputs& in) { return t.transpose(in[0]); }},
      {"add", [](Rng& r) { return Inputs{random_tensor(r, {4}), random_tensor(r, {4})}; },
       [](Tape& t, Inputs& in) { return t.add(in[0], in[1]); }},
      {"sub", [](Rng& r) { return Inputs{random_tensor(r, {4}), random_tensor(r, {4})}; },
       [](Tape& t, Inputs& in) { return t.sub(in[0], in[1]); }},
      {"mul", [](Rng& r) { return Inputs{random_tensor(r, {4}), random_tensor(r, {4})}; },
       [](Tape& t, Inputs& in) { return t.mul(in[0], in[1]); }},
      {"scale", [](Rng& r) { return Inputs{random_tensor(r, {4})}; },
       [](Tape& t, Inputs& in) { return t.scale(in[0], -1.7); }},
      {"add_rows", [](Rng& r) { return Inputs{random_tensor(r, {3, 2}), random_tensor(r, {2})}; },
       [](Tape& t, Inputs& in) { return t.add_rows(in[0], in[1]); }},
      {"sigmoid", [](Rng& r) { return Inputs{random_tensor(r, {5}, -4, 4)}; },
       [](Tape& t, Inputs& in) { return t.sigmoid(in[0]); }},
      {"tanh", [](Rng& r) { return Inputs{random_tensor(r, {5}, -2, 2)}; },
       [](Tape& t, Inputs& in) { return t.tanh(in[0]); }},
      {"softmax", [](Rng& r) { return Inputs{random_tensor(r, {5}, -3, 3)}; },
       [](Tape& t, Inputs& in) { return t.softmax(in[0]); }},
      {"sum", [](Rng& r) { return Inputs{random_tensor(r, {2, 3})}; },
       [](Tape& t, Inputs& in) { return t.sum(in[0]); }},
      {"dot", [](Rng& r) { return Inputs{random_tensor(r, {4}), random_tensor(r, {4})}; },
       [](Tape& t, Inputs& in) { return t.dot(in[0], in[1]); }},
      {"cross_entropy", [](Rng& r) { return Inputs{random_tensor(r, {5}, -3, 3)}; },
       [](Tape& t, Inputs& in) { return t.cross_entropy(in[0], 2); }},
      {"sigmoid_cross_entropy", [](Rng& r) { return Inputs{random_tensor(r, {1}, -3, 3)}; },
       [](Tape& t, Inputs& in) { return t.sigmoid_cross_entropy(in[0], 1); }},
      {"concat", [](Rng& r) { return Inputs{random_tensor(r, {2}), random_tensor(r, {3})}; },
       [](Tape& t, Inputs& in) { return t.concat({in[0], in[1]}); }},
      {"concat rows", [](Rng& r) { return Inputs{random_tensor(r, {1, 3}), random_tensor(r, {2, 3})}; },
       [](Tape& t, Inputs& in) { return t.concat({in[0], in[1]}, 0); }},
      {"slice", [](Rng& r) { return Inputs{random_tensor(r, {6})}; },
       [](Tape& t, Inputs& in) { return t.slice(in[0], 2, 3); }},
      {"row", [](Rng& r) { return Inputs{random_tensor(r, {4, 3})}; },
       [](Tape& t, Inputs& in) { return t.row(in[0], 2); }},
      {"stack", [](Rng& r) { return Inputs{random_tensor(r, {3}), random_tensor(r, {3})}; },
       [](Tape& t, Inputs& in) { return t.stack(in); }},
  };
  for (const Case& c : cases) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed * 131 + 7);
      worst = std::max(worst, op_grad_error(c.op, c.make(rng), rng));
    }
    INFO(std::string(c.name));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("property: matmul is associative") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const Tensor a = random_tensor(rng, {3, 4}, -1, 1, false);
    const Tensor b = random_tensor(rng, {4, 2}, -1, 1, false);
    const Tensor c = random_tensor(rng, {2, 5}, -1, 1, false);
    Tape tape(Tape::Mode::kNoGrad);
    const Tensor left = tape.matmul(tape.matmul(a, b), c);
    const Tensor right = tape.matmul(a, tape.matmul(b, c));
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < left.size(); ++i) {
      diff += (left[i] - right[i]) * (left[i] - right[i]);
      norm += left[i] * left[i];
    }
    CHECK(std::sqrt(diff) <= 1e-9 * std::max(std::sqrt(norm), 1e-300));
  }
}

TEST_CASE("property: finite inputs give finite outputs") {
  Tape tape;
  const Tensor extreme = Tensor::vector({-1e6, -800, 0, 800, 1e6}, true);
  CHECK(testing::all_finite(tape.sigmoid(extreme)));
  CHECK(testing::all_finite(tape.tanh(extreme)));
  CHECK(testing::all_finite(tape.softmax(extreme)));
  Tensor ce = tape.cross_entropy(extreme, 0);
  CHECK(std::isfinite(ce.item()));
  Tensor sce = tape.sigmoid_cross_entropy(Tensor::vector({-1e6}, true), 1);
  CHECK(std::isfinite(sce.item()));
  tape.backward(tape.add(ce, tape.sum(tape.softmax(extreme))));
  for (double g : extreme.grad()) CHECK(std::isfinite(g));
}

TEST_CASE("tensor shape contracts") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  const Tensor m = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(m.at(1, 2) == 6.0);
  CHECK(m.dim(1) == 3);
  CHECK_THROWS_AS(m.item(), DimensionError);
  CHECK_THROWS_AS(m.dim(2), DimensionError);
  Tape tape;
  CHECK_THROWS_AS(tape.row(m, 2), IndexError);
  CHECK_THROWS_AS(tape.slice(Tensor::vector({1, 2}), 1, 2), DimensionError);
  const Tensor copy = m.clone();
  CHECK_FALSE(copy.same_storage(m));
  CHECK(values(copy) == values(m));
}
