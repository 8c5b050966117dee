#include "profchat/numgrad/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "profchat/errors.hpp"

namespace profchat::numgrad {

namespace {

using StoragePtr = std::shared_ptr<detail::Storage>;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " +
                         shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " +
                         shape_string(x.shape()));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace

// Tensor internals are reached through friendship; this accessor keeps the
// op bodies short.
#define IMPL(t) ((t).impl_)

Tensor Tape::make_output(Shape shape, std::vector<double> values,
                         std::initializer_list<const Tensor*> inputs) {
  auto impl = std::make_shared<detail::Storage>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->leaf = false;
  if (recording()) {
    for (const Tensor* in : inputs) {
      if (in->requires_grad()) {
        impl->requires_grad = true;
        break;
      }
    }
  }
  if (impl->requires_grad) impl->ensure_grad();
  return Tensor(std::move(impl));
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) +
                         " by " + shape_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  Tensor result = make_output({m, n}, std::move(out), {&a, &b});
  if (result.requires_grad()) {
    StoragePtr sa = IMPL(a), sb = IMPL(b), so = IMPL(result);
    record([sa, sb, so, m, k, n] {
      const double* go = so->grad.data();
      if (sa->requires_grad) {
        sa->ensure_grad();
        // dA = dC * B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j)
              acc += go[i * n + j] * sb->data[p * n + j];
            sa->grad[i * k + p] += acc;
          }
      }
      if (sb->requires_grad) {
        sb->ensure_grad();
        // dB = A^T * dC
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = sa->data[i * k + p];
            for (std::size_t j = 0; j < n; ++j)
              sb->grad[p * n + j] += av * go[i * n + j];
          }
      }
    });
  }
  return result;
}

Tensor Tape::matvec(const Tensor& w, const Tensor& x) {
  if (w.rank() != 2 || x.rank() != 1 || w.shape()[1] != x.shape()[0]) {
    throw DimensionError("matvec: cannot multiply " + shape_string(w.shape()) +
                         " by " + shape_string(x.shape()));
  }
  const std::size_t m = w.shape()[0], k = w.shape()[1];
  std::vector<double> out(m);
  const double* pw = w.data().data();
  const double* px = x.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* wrow = pw + i * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += wrow[p] * px[p];
    out[i] = acc;
  }
  Tensor result = make_output({m}, std::move(out), {&w, &x});
  if (result.requires_grad()) {
    StoragePtr sw = IMPL(w), sx = IMPL(x), so = IMPL(result);
    record([sw, sx, so, m, k] {
      const double* go = so->grad.data();
      if (sw->requires_grad) {
        sw->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          const double g = go[i];
          if (g == 0.0) continue;
          double* grow = sw->grad.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) grow[p] += g * sx->data[p];
        }
      }
      if (sx->requires_grad) {
        sx->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          const double g = go[i];
          if (g == 0.0) continue;
          const double* wrow = sw->data.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) sx->grad[p] += g * wrow[p];
        }
      }
    });
  }
  return result;
}

Tensor Tape::transpose(const Tensor& m) {
  require_rank("transpose", m, 2);
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = m[i * c + j];
  Tensor result = make_output({c, r}, std::move(out), {&m});
  if (result.requires_grad()) {
    StoragePtr sm = IMPL(m), so = IMPL(result);
    record([sm, so, r, c] {
      sm->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          sm->grad[i * c + j] += so->grad[j * r + i];
    });
  }
  return result;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor result = make_output(a.shape(), std::move(out), {&a, &b});
  if (result.requires_grad()) {
    StoragePtr sa = IMPL(a), sb = IMPL(b), so = IMPL(result);
    record([sa, sb, so] {
      for (StoragePtr s : {sa, sb}) {
        if (!s->requires_grad) continue;
        s->ensure_grad();
        for (std::size_t i = 0; i < so->grad.size(); ++i)
          s->grad[i] += so->grad[i];
      }
    });
  }
  return result;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tensor result = make_output(a.shape(), std::move(out), {&a, &b});
  if (result.requires_grad()) {
    StoragePtr sa = IMPL(a), sb = IMPL(b), so = IMPL(result);
    record([sa, sb, so] {
      if (sa->requires_grad) {
        sa->ensure_grad();
        for (std::size_t i = 0; i < so->grad.size(); ++i)
          sa->grad[i] += so->grad[i];
      }
      if (sb->requires_grad) {
        sb->ensure_grad();
        for (std::size_t i = 0; i < so->grad.size(); ++i)
          sb->grad[i] -= so->grad[i];
      }
    });
  }
  return result;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor result = make_output(a.shape(), std::move(out), {&a, &b});
  if (result.requires_grad()) {
    StoragePtr sa = IMPL(a), sb = IMPL(b), so = IMPL(result);
    record([sa, sb, so] {
      if (sa->requires_grad) {
        sa->ensure_grad();
        for (std::size_t i = 0; i < so->grad.size(); ++i)
          sa->grad[i] += so->grad[i] * sb->data[i];
      }
      if (sb->requires_grad) {
        sb->ensure_grad();
        for (std::size_t i = 0; i < so->grad.size(); ++i)
          sb->grad[i] += so->grad[i] * sa->data[i];
      }
    });
  }
  return result;
}

Tensor Tape::scale(const Tensor& x, double factor) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  Tensor result = make_output(x.shape(), std::move(out), {&x});
  if (result.requires_grad()) {
    StoragePtr sx = IMPL(x), so = IMPL(result);
    record([sx, so, factor] {
      sx->ensure_grad();
      for (std::size_t i = 0; i < so->grad.size(); ++i)
        sx->grad[i] += so->grad[i] * factor;
    });
  }
  return result;
}

Tensor Tape::add_rows(const Tensor& m, const Tensor& v) {
  require_rank("add_rows", m, 2);
  require_rank("add_rows", v, 1);
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  if (v.shape()[0] != c) {
    throw DimensionError("add_rows: row length of " + shape_string(m.shape()) +
                         " does not match " + shape_string(v.shape()));
  }
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m[i * c + j] + v[j];
  Tensor result = make_output({r, c}, std::move(out), {&m, &v});
  if (result.requires_grad()) {
    StoragePtr sm = IMPL(m), sv = IMPL(v), so = IMPL(result);
    record([sm, sv, so, r, c] {
      if (sm->requires_grad) {
        sm->ensure_grad();
        for (std::size_t i = 0; i < r * c; ++i) sm->grad[i] += so->grad[i];
      }
      if (sv->requires_grad) {
        sv->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            sv->grad[j] += so->grad[i * c + j];
      }
    });
  }
  return result;
}

Tensor Tape::sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(x[i]);
  Tensor result = make_output(x.shape(), std::move(out), {&x});
  if (result.requires_grad()) {
    StoragePtr sx = IMPL(x), so = IMPL(result);
    record([sx, so] {
      sx->ensure_grad();
      for (std::size_t i = 0; i < so->grad.size(); ++i) {
        const double y = so->data[i];
        sx->grad[i] += so->grad[i] * y * (1.0 - y);
      }
    });
  }
  return result;
}

Tensor Tape::tanh(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  Tensor result = make_output(x.shape(), std::move(out), {&x});
  if (result.requires_grad()) {
    StoragePtr sx = IMPL(x), so = IMPL(result);
    record([sx, so] {
      sx->ensure_grad();
      for (std::size_t i = 0; i < so->grad.size(); ++i) {
        const double y = so->data[i];
        sx->grad[i] += so->grad[i] * (1.0 - y * y);
      }
    });
  }
  return result;
}

Tensor Tape::softmax(const Tensor& x) {
  require_rank("softmax", x, 1);
  if (x.size() == 0) throw DomainError("softmax: empty input");
  const double top = *std::max_element(x.data().begin(), x.data().end());
  std::vector<double> out(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(x[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
  Tensor result = make_output(x.shape(), std::move(out), {&x});
  if (result.requires_grad()) {
    StoragePtr sx = IMPL(x), so = IMPL(result);
    record([sx, so] {
      sx->ensure_grad();
      double inner = 0.0;
      for (std::size_t i = 0; i < so->data.size(); ++i)
        inner += so->grad[i] * so->data[i];
      for (std::size_t i = 0; i < so->data.size(); ++i)
        sx->grad[i] += so->data[i] * (so->grad[i] - inner);
    });
  }
  return result;
}

Tensor Tape::sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor result = make_output({}, {total}, {&x});
  if (result.requires_grad()) {
    StoragePtr sx = IMPL(x), so = IMPL(result);
    record([sx, so] {
      sx->ensure_grad();
      for (double& g : sx->grad) g += so->grad[0];
    });
  }
  return result;
}

Tensor Tape::dot(const Tensor& a, const Tensor& b) {
  require_same_shape("dot", a, b);
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += a[i] * b[i];
  Tensor result = make_output({}, {total}, {&a, &b});
  if (result.requires_grad()) {
    StoragePtr sa = IMPL(a), sb = IMPL(b), so = IMPL(result);
    record([sa, sb, so] {
      const double g = so->grad[0];
      if (sa->requires_grad) {
        sa->ensure_grad();
        for (std::size_t i = 0; i < sa->data.size(); ++i)
          sa->grad[i] += g * sb->data[i];
      }
      if (sb->requires_grad) {
        sb->ensure_grad();
        for (std::size_t i = 0; i < sb->data.size(); ++i)
          sb->grad[i] += g * sa->data[i];
      }
    });
  }
  return result;
}

Tensor Tape::cross_entropy(const Tensor& logits, std::size_t target) {
  require_rank("cross_entropy", logits, 1);
  if (target >= logits.size()) {
    throw IndexError("cross_entropy: target " + std::to_string(target) +
                     " out of range for " + std::to_string(logits.size()) +
                     " classes");
  }
  const double top =
      *std::max_element(logits.data().begin(), logits.data().end());
  std::vector<double> probs(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    probs[i] = std::exp(logits[i] - top);
    total += probs[i];
  }
  const double loss = std::log(total) + top - logits[target];
  Tensor result = make_output({}, {loss}, {&logits});
  if (result.requires_grad()) {
    for (double& p : probs) p /= total;
    StoragePtr sl = IMPL(logits), so = IMPL(result);
    record([sl, so, target, probs = std::move(probs)] {
      sl->ensure_grad();
      const double g = so->grad[0];
      for (std::size_t i = 0; i < probs.size(); ++i)
        sl->grad[i] += g * (probs[i] - (i == target ? 1.0 : 0.0));
    });
  }
  return result;
}

Tensor Tape::sigmoid_cross_entropy(const Tensor& logit, int label) {
  if (logit.size() != 1) {
    throw DimensionError("sigmoid_cross_entropy: expected one logit, got " +
                         shape_string(logit.shape()));
  }
  if (label != 0 && label != 1) {
    throw IndexError("sigmoid_cross_entropy: label must be 0 or 1, got " +
                     std::to_string(label));
  }
  const double a = logit[0];
  // -log sigmoid(a) = softplus(-a); -log(1 - sigmoid(a)) = softplus(a)
  const double loss = label == 1 ? softplus(-a) : softplus(a);
  Tensor result = make_output({}, {loss}, {&logit});
  if (result.requires_grad()) {
    StoragePtr sl = IMPL(logit), so = IMPL(result);
    record([sl, so, a, label] {
      sl->ensure_grad();
      sl->grad[0] += so->grad[0] * (stable_sigmoid(a) - label);
    });
  }
  return result;
}

Tensor Tape::concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor Tape::concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t rank = std::max<std::size_t>(parts.front().rank(), 1);
  if (axis >= rank) {
    throw DimensionError("concat: axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  }
  auto shape_of = [](const Tensor& t) {
    return t.rank() == 0 ? Shape{1} : t.shape();
  };
  Shape out_shape = shape_of(parts.front());
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    Shape s = shape_of(p);
    if (s.size() != rank) {
      throw DimensionError("concat: rank mismatch between " +
                           shape_string(shape_of(parts.front())) + " and " +
                           shape_string(s));
    }
    for (std::size_t d = 0; d < rank; ++d) {
      if (d != axis && s[d] != shape_of(parts.front())[d]) {
        throw DimensionError("concat: non-axis dims differ between " +
                             shape_string(shape_of(parts.front())) + " and " +
                             shape_string(s));
      }
    }
    out_shape[axis] += s[axis];
  }
  // Treat every tensor as [outer x (axis_len * inner)] blocks.
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
  for (std::size_t d = axis + 1; d < rank; ++d) inner *= out_shape[d];
  const std::size_t out_block = out_shape[axis] * inner;

  std::vector<double> out(shape_size(out_shape));
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> blocks;
  std::size_t offset = 0;
  bool needs_grad = false;
  for (const Tensor& p : parts) {
    const std::size_t block = shape_of(p)[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * block, block,
                  out.data() + o * out_block + offset);
    offsets.push_back(offset);
    blocks.push_back(block);
    offset += block;
    needs_grad = needs_grad || p.requires_grad();
  }

  auto impl = std::make_shared<detail::Storage>();
  impl->shape = out_shape;
  impl->data = std::move(out);
  impl->leaf = false;
  impl->requires_grad = recording() && needs_grad;
  if (impl->requires_grad) impl->ensure_grad();
  Tensor result(impl);
  if (result.requires_grad()) {
    std::vector<StoragePtr> inputs;
    for (const Tensor& p : parts) inputs.push_back(IMPL(p));
    record([inputs = std::move(inputs), impl, offsets = std::move(offsets),
            blocks = std::move(blocks), outer, out_block] {
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const StoragePtr& s = inputs[k];
        if (!s->requires_grad) continue;
        s->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < blocks[k]; ++i)
            s->grad[o * blocks[k] + i] +=
                impl->grad[o * out_block + offsets[k] + i];
      }
    });
  }
  return result;
}

Tensor Tape::slice(const Tensor& x, std::size_t begin, std::size_t length) {
  require_rank("slice", x, 1);
  if (begin + length > x.size()) {
    throw DimensionError("slice: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + length) + ") out of range for " +
                         shape_string(x.shape()));
  }
  std::vector<double> out(x.data().begin() + begin,
                          x.data().begin() + begin + length);
  Tensor result = make_output({length}, std::move(out), {&x});
  if (result.requires_grad()) {
    StoragePtr sx = IMPL(x), so = IMPL(result);
    record([sx, so, begin, length] {
      sx->ensure_grad();
      for (std::size_t i = 0; i < length; ++i)
        sx->grad[begin + i] += so->grad[i];
    });
  }
  return result;
}

Tensor Tape::row(const Tensor& m, std::size_t index) {
  require_rank("row", m, 2);
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  if (index >= r) {
    throw IndexError("row: index " + std::to_string(index) +
                     " out of range for " + shape_string(m.shape()));
  }
  std::vector<double> out(m.data().begin() + index * c,
                          m.data().begin() + (index + 1) * c);
  Tensor result = make_output({c}, std::move(out), {&m});
  if (result.requires_grad()) {
    StoragePtr sm = IMPL(m), so = IMPL(result);
    record([sm, so, index, c] {
      sm->ensure_grad();
      for (std::size_t j = 0; j < c; ++j) sm->grad[index * c + j] += so->grad[j];
    });
  }
  return result;
}

Tensor Tape::stack(std::span<const Tensor> rows) {
  if (rows.empty()) throw DimensionError("stack: no inputs");
  const std::size_t c = rows.front().size();
  bool needs_grad = false;
  std::vector<double> out;
  out.reserve(rows.size() * c);
  for (const Tensor& r : rows) {
    if (r.rank() != 1 || r.size() != c) {
      throw DimensionError("stack: expected vectors of length " +
                           std::to_string(c) + ", got " +
                           shape_string(r.shape()));
    }
    out.insert(out.end(), r.data().begin(), r.data().end());
    needs_grad = needs_grad || r.requires_grad();
  }
  auto impl = std::make_shared<detail::Storage>();
  impl->shape = {rows.size(), c};
  impl->data = std::move(out);
  impl->leaf = false;
  impl->requires_grad = recording() && needs_grad;
  if (impl->requires_grad) impl->ensure_grad();
  Tensor result(impl);
  if (result.requires_grad()) {
    std::vector<StoragePtr> inputs;
    for (const Tensor& r : rows) inputs.push_back(IMPL(r));
    record([inputs = std::move(inputs), impl, c] {
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!inputs[k]->requires_grad) continue;
        inputs[k]->ensure_grad();
        for (std::size_t j = 0; j < c; ++j)
          inputs[k]->grad[j] += impl->grad[k * c + j];
      }
    });
  }
  return result;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_string(loss.shape())
                                        : std::string("undefined tensor")));
  }
  if (replayed_) {
    throw ContractError("backward: tape already replayed; build a new tape");
  }
  replayed_ = true;
  if (!loss.requires_grad()) return;
  IMPL(loss)->ensure_grad();
  IMPL(loss)->grad[0] += 1.0;
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
  rules_.clear();
}

#undef IMPL

}  // namespace profchat::numgrad
