#include "plancraft/nn.hpp"

#include <cmath>

#include "plancraft/errors.hpp"

namespace plancraft::nn {

void round_to_float(Mat& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

Parameter& ParamStore::add(const std::string& name, int rows, int cols, double scale, std::mt19937_64& rng) {
  if (params_.count(name)) throw Error("duplicate parameter " + name);
  Parameter p;
  p.value = Mat::Zero(rows, cols);
  if (scale > 0.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = u(rng);
    round_to_float(p.value);
  }
  p.grad = Mat::Zero(rows, cols);
  p.m = Mat::Zero(rows, cols);
  p.v = Mat::Zero(rows, cols);
  order_.push_back(name);
  return params_[name] = std::move(p);
}

Parameter& ParamStore::add_constant(const std::string& name, int rows, int cols, double value) {
  std::mt19937_64 unused;
  auto& p = add(name, rows, cols, 0.0, unused);
  p.value.setConstant(value);
  round_to_float(p.value);
  return p;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter " + name);
  return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter " + name);
  return it->second;
}

std::size_t ParamStore::size() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) p.grad.setZero();
}

void Adam::step(ParamStore& params, const AdamConfig& cfg) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (const auto& name : params.names()) {
    auto& p = params.at(name);
    p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * p.grad;
    p.v = cfg.beta2 * p.v + (1.0 - cfg.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= cfg.lr * (p.m.array() / c1) / ((p.v.array() / c2).sqrt() + cfg.eps);
    round_to_float(p.value);
  }
}

void Node::accumulate(const Mat& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

ConvPlan make_conv_plan(int batch, int height, int width, int stride) {
  ConvPlan p;
  p.batch = batch;
  p.height = height;
  p.width = width;
  p.stride = stride;
  p.out_height = (height - 1) / stride + 1;
  p.out_width = (width - 1) / stride + 1;
  p.source.reserve(static_cast<std::size_t>(batch * p.out_height * p.out_width * 9));
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < p.out_height; ++oy) {
      for (int ox = 0; ox < p.out_width; ++ox) {
        for (int ky = -1; ky <= 1; ++ky) {
          for (int kx = -1; kx <= 1; ++kx) {
            const int y = oy * stride + ky;
            const int x = ox * stride + kx;
            p.source.push_back(y < 0 || y >= height || x < 0 || x >= width ? -1 : (b * height + y) * width + x);
          }
        }
      }
    }
  }
  return p;
}

Var Graph::make(Mat value, bool needs_grad) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.value = std::move(value);
  n.needs_grad = record_ && needs_grad;
  return &n;
}

Var Graph::constant(Mat m) { return make(std::move(m), false); }

Var Graph::param(const Parameter& p) {
  Var n = make(p.value, true);
  n->param = record_ ? const_cast<Parameter*>(&p) : nullptr;
  return n;
}

#define PLANCRAFT_BACKWARD(out, ...) \
  if (out->needs_grad) out->backward = [__VA_ARGS__](Node & self)

Var Graph::matmul(Var a, Var b) {
  if (a->value.cols() != b->value.rows()) throw Error("matmul shape mismatch");
  Mat v;
  v.noalias() = a->value * b->value;
  Var out = make(std::move(v), a->needs_grad || b->needs_grad);
  PLANCRAFT_BACKWARD(out, a, b) {
    if (a->needs_grad) {
      Mat g;
      g.noalias() = self.grad * b->value.transpose();
      a->accumulate(g);
    }
    if (b->needs_grad) {
      Mat g;
      g.noalias() = a->value.transpose() * self.grad;
      b->accumulate(g);
    }
  };
  return out;
}

Var Graph::add(Var a, Var b) {
  Var out = make(a->value + b->value, a->needs_grad || b->needs_grad);
  PLANCRAFT_BACKWARD(out, a, b) {
    if (a->needs_grad) a->accumulate(self.grad);
    if (b->needs_grad) b->accumulate(self.grad);
  };
  return out;
}

Var Graph::sub(Var a, Var b) {
  Var out = make(a->value - b->value, a->needs_grad || b->needs_grad);
  PLANCRAFT_BACKWARD(out, a, b) {
    if (a->needs_grad) a->accumulate(self.grad);
    if (b->needs_grad) b->accumulate(-self.grad);
  };
  return out;
}

Var Graph::mul(Var a, Var b) {
  Var out = make(a->value.cwiseProduct(b->value), a->needs_grad || b->needs_grad);
  PLANCRAFT_BACKWARD(out, a, b) {
    if (a->needs_grad) a->accumulate(self.grad.cwiseProduct(b->value));
    if (b->needs_grad) b->accumulate(self.grad.cwiseProduct(a->value));
  };
  return out;
}

Var Graph::scale(Var a, double s) {
  Var out = make(a->value * s, a->needs_grad);
  PLANCRAFT_BACKWARD(out, a, s) { a->accumulate(self.grad * s); };
  return out;
}

Var Graph::one_minus(Var a) {
  Var out = make((1.0 - a->value.array()).matrix(), a->needs_grad);
  PLANCRAFT_BACKWARD(out, a) { a->accumulate(-self.grad); };
  return out;
}

Var Graph::add_row(Var a, Var row) {
  if (row->value.rows() != 1 || row->value.cols() != a->value.cols()) throw Error("add_row shape mismatch");
  Mat v = a->value;
  v.rowwise() += row->value.row(0);
  Var out = make(std::move(v), a->needs_grad || row->needs_grad);
  PLANCRAFT_BACKWARD(out, a, row) {
    if (a->needs_grad) a->accumulate(self.grad);
    if (row->needs_grad) row->accumulate(self.grad.colwise().sum());
  };
  return out;
}

Var Graph::linear(Var x, const Parameter& w, const Parameter& b) { return add_row(matmul(x, param(w)), param(b)); }

Var Graph::gelu(Var a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
  Mat t = (c * (a->value.array() + 0.044715 * a->value.array().cube())).tanh().matrix();
  Mat v = (0.5 * a->value.array() * (1.0 + t.array())).matrix();
  Var out = make(std::move(v), a->needs_grad);
  PLANCRAFT_BACKWARD(out, a, c, t = std::move(t)) {
    const auto x = a->value.array();
    const auto d = 0.5 * (1.0 + t.array()) +
                   0.5 * x * (1.0 - t.array().square()) * c * (1.0 + 3.0 * 0.044715 * x.square());
    a->accumulate((self.grad.array() * d).matrix());
  };
  return out;
}

Var Graph::tanh(Var a) {
  Var out = make(a->value.array().tanh().matrix(), a->needs_grad);
  PLANCRAFT_BACKWARD(out, a) { a->accumulate((self.grad.array() * (1.0 - self.value.array().square())).matrix()); };
  return out;
}

Var Graph::sigmoid(Var a) {
  Var out = make((1.0 / (1.0 + (-a->value.array()).exp())).matrix(), a->needs_grad);
  PLANCRAFT_BACKWARD(out, a) {
    a->accumulate((self.grad.array() * self.value.array() * (1.0 - self.value.array())).matrix());
  };
  return out;
}

Var Graph::layer_norm(Var x, const Parameter& gain, const Parameter& bias, double eps) {
  const Eigen::Index rows = x->value.rows();
  const Eigen::Index cols = x->value.cols();
  Mat xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mu = x->value.row(r).mean();
    const double var = (x->value.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x->value.row(r).array() - mu) * inv_std(r);
  }
  Var g = param(gain);
  Var b = param(bias);
  Mat v = xhat.array().rowwise() * g->value.row(0).array();
  v.rowwise() += b->value.row(0);
  Var out = make(std::move(v), true);
  PLANCRAFT_BACKWARD(out, x, g, b, xhat = std::move(xhat), inv_std = std::move(inv_std), cols) {
    g->accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
    b->accumulate(self.grad.colwise().sum());
    if (!x->needs_grad) return;
    Mat dxhat = self.grad.array().rowwise() * g->value.row(0).array();
    Mat dx(dxhat.rows(), dxhat.cols());
    const double n = static_cast<double>(cols);
    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
      const double s1 = dxhat.row(r).sum();
      const double s2 = dxhat.row(r).dot(xhat.row(r));
      dx.row(r) = (inv_std(r) / n) * (n * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2);
    }
    x->accumulate(dx);
  };
  return out;
}

Var Graph::attention(Var q, Var k, Var v, const std::vector<Segment>& segments, int heads) {
  const int d = static_cast<int>(q->value.cols());
  if (d % heads != 0) throw Error("attention width not divisible by heads");
  const int dk = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
  Mat o = Mat::Zero(q->value.rows(), d);
  std::vector<Mat> probs;
  probs.reserve(segments.size() * static_cast<std::size_t>(heads));
  for (const auto& seg : segments) {
    for (int h = 0; h < heads; ++h) {
      const auto qh = q->value.block(seg.start, h * dk, seg.length, dk);
      const auto kh = k->value.block(seg.start, h * dk, seg.length, dk);
      const auto vh = v->value.block(seg.start, h * dk, seg.length, dk);
      Mat s;
      s.noalias() = sc * (qh * kh.transpose());
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp();
        s.row(r) /= s.row(r).sum();
      }
      o.block(seg.start, h * dk, seg.length, dk).noalias() = s * vh;
      probs.push_back(std::move(s));
    }
  }
  Var out = make(std::move(o), q->needs_grad || k->needs_grad || v->needs_grad);
  PLANCRAFT_BACKWARD(out, q, k, v, segments, heads, dk, sc, probs = std::move(probs)) {
    Mat dq = Mat::Zero(q->value.rows(), q->value.cols());
    Mat dk_ = Mat::Zero(k->value.rows(), k->value.cols());
    Mat dv = Mat::Zero(v->value.rows(), v->value.cols());
    std::size_t idx = 0;
    for (const auto& seg : segments) {
      for (int h = 0; h < heads; ++h, ++idx) {
        const Mat& p = probs[idx];
        const auto qh = q->value.block(seg.start, h * dk, seg.length, dk);
        const auto kh = k->value.block(seg.start, h * dk, seg.length, dk);
        const auto vh = v->value.block(seg.start, h * dk, seg.length, dk);
        const auto go = self.grad.block(seg.start, h * dk, seg.length, dk);
        dv.block(seg.start, h * dk, seg.length, dk).noalias() = p.transpose() * go;
        Mat dp;
        dp.noalias() = go * vh.transpose();
        Mat ds(p.rows(), p.cols());
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
          const double dot = dp.row(r).dot(p.row(r));
          ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
        }
        ds *= sc;
        dq.block(seg.start, h * dk, seg.length, dk).noalias() = ds * kh;
        dk_.block(seg.start, h * dk, seg.length, dk).noalias() = ds.transpose() * qh;
      }
    }
    if (q->needs_grad) q->accumulate(dq);
    if (k->needs_grad) k->accumulate(dk_);
    if (v->needs_grad) v->accumulate(dv);
  };
  return out;
}

Var Graph::gather_rows(Var a, const std::vector<int>& rows) {
  Mat v(static_cast<Eigen::Index>(rows.size()), a->value.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = a->value.row(rows[i]);
  Var out = make(std::move(v), a->needs_grad);
  PLANCRAFT_BACKWARD(out, a, rows) {
    Mat g = Mat::Zero(a->value.rows(), a->value.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    a->accumulate(g);
  };
  return out;
}

Var Graph::scatter_rows(const std::vector<std::pair<Var, std::vector<int>>>& parts, int rows) {
  if (parts.empty()) throw Error("scatter_rows needs at least one part");
  const Eigen::Index cols = parts.front().first->value.cols();
  Mat v = Mat::Zero(rows, cols);
  bool needs = false;
  for (const auto& [src, idx] : parts) {
    if (src->value.cols() != cols || static_cast<std::size_t>(src->value.rows()) != idx.size()) {
      throw Error("scatter_rows shape mismatch");
    }
    for (std::size_t i = 0; i < idx.size(); ++i) v.row(idx[i]) = src->value.row(static_cast<Eigen::Index>(i));
    needs = needs || src->needs_grad;
  }
  Var out = make(std::move(v), needs);
  PLANCRAFT_BACKWARD(out, parts) {
    for (const auto& [src, idx] : parts) {
      if (!src->needs_grad) continue;
      Mat g(static_cast<Eigen::Index>(idx.size()), self.grad.cols());
      for (std::size_t i = 0; i < idx.size(); ++i) g.row(static_cast<Eigen::Index>(i)) = self.grad.row(idx[i]);
      src->accumulate(g);
    }
  };
  return out;
}

Var Graph::concat_cols(Var a, Var b) {
  if (a->value.rows() != b->value.rows()) throw Error("concat_cols shape mismatch");
  Mat v(a->value.rows(), a->value.cols() + b->value.cols());
  v << a->value, b->value;
  Var out = make(std::move(v), a->needs_grad || b->needs_grad);
  PLANCRAFT_BACKWARD(out, a, b) {
    if (a->needs_grad) a->accumulate(self.grad.leftCols(a->value.cols()));
    if (b->needs_grad) b->accumulate(self.grad.rightCols(b->value.cols()));
  };
  return out;
}

Var Graph::reshape(Var a, int rows, int cols) {
  if (static_cast<Eigen::Index>(rows) * cols != a->value.size()) throw Error("reshape size mismatch");
  Mat v = Eigen::Map<const Mat>(a->value.data(), rows, cols);
  Var out = make(std::move(v), a->needs_grad);
  PLANCRAFT_BACKWARD(out, a) {
    a->accumulate(Eigen::Map<const Mat>(self.grad.data(), a->value.rows(), a->value.cols()));
  };
  return out;
}

Var Graph::im2col(Var x, const ConvPlan& plan) {
  const Eigen::Index c = x->value.cols();
  const Eigen::Index out_rows = static_cast<Eigen::Index>(plan.source.size() / 9);
  if (x->value.rows() != static_cast<Eigen::Index>(plan.batch) * plan.height * plan.width) {
    throw Error("im2col input shape mismatch");
  }
  Mat v = Mat::Zero(out_rows, 9 * c);
  for (Eigen::Index r = 0; r < out_rows; ++r) {
    for (int t = 0; t < 9; ++t) {
      const int src = plan.source[static_cast<std::size_t>(r * 9 + t)];
      if (src >= 0) v.block(r, t * c, 1, c) = x->value.row(src);
    }
  }
  Var out = make(std::move(v), x->needs_grad);
  PLANCRAFT_BACKWARD(out, x, plan, c, out_rows) {
    Mat g = Mat::Zero(x->value.rows(), c);
    for (Eigen::Index r = 0; r < out_rows; ++r) {
      for (int t = 0; t < 9; ++t) {
        const int src = plan.source[static_cast<std::size_t>(r * 9 + t)];
        if (src >= 0) g.row(src) += self.grad.block(r, t * c, 1, c);
      }
    }
    x->accumulate(g);
  };
  return out;
}

Var Graph::prefix_sum(Var a, int group) {
  if (group <= 0 || a->value.rows() % group != 0) throw Error("prefix_sum group mismatch");
  Mat v = a->value;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    if (r % group != 0) v.row(r) = v.row(r - 1) + a->value.row(r);
  }
  Var out = make(std::move(v), a->needs_grad);
  PLANCRAFT_BACKWARD(out, a, group) {
    Mat g = self.grad;
    for (Eigen::Index r = g.rows() - 1; r >= 0; --r) {
      if ((r + 1) % group != 0) g.row(r) += g.row(r + 1);
    }
    a->accumulate(g);
  };
  return out;
}

Var Graph::softmax_rows(Var a) {
  Mat v = a->value;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - m).exp();
    v.row(r) /= v.row(r).sum();
  }
  Var out = make(std::move(v), a->needs_grad);
  PLANCRAFT_BACKWARD(out, a) {
    Mat g(self.value.rows(), self.value.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double dot = self.grad.row(r).dot(self.value.row(r));
      g.row(r) = self.value.row(r).array() * (self.grad.row(r).array() - dot);
    }
    a->accumulate(g);
  };
  return out;
}

Var Graph::l1(Var pred, const Mat& target) {
  if (pred->value.rows() != target.rows() || pred->value.cols() != target.cols()) throw Error("l1 shape mismatch");
  const Mat diff = pred->value - target;
  const double n = static_cast<double>(diff.size());
  Mat v(1, 1);
  v(0, 0) = diff.cwiseAbs().sum() / n;
  Var out = make(std::move(v), pred->needs_grad);
  PLANCRAFT_BACKWARD(out, pred, diff, n) {
    pred->accumulate((diff.array().sign() * (self.grad(0, 0) / n)).matrix());
  };
  return out;
}

Var Graph::cross_entropy(Var logits, const Mat& target) {
  if (logits->value.rows() != target.rows() || logits->value.cols() != target.cols()) {
    throw Error("cross_entropy shape mismatch");
  }
  Mat p = logits->value;
  double loss = 0.0;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double m = p.row(r).maxCoeff();
    const double lse = m + std::log((p.row(r).array() - m).exp().sum());
    loss -= (target.row(r).array() * (p.row(r).array() - lse)).sum();
    p.row(r) = (p.row(r).array() - lse).exp();
  }
  const double rows = static_cast<double>(p.rows());
  Mat v(1, 1);
  v(0, 0) = loss / rows;
  Var out = make(std::move(v), logits->needs_grad);
  PLANCRAFT_BACKWARD(out, logits, p = std::move(p), target, rows) {
    Mat g(p.rows(), p.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      g.row(r) = (p.row(r) * target.row(r).sum() - target.row(r)) * (self.grad(0, 0) / rows);
    }
    logits->accumulate(g);
  };
  return out;
}

#undef PLANCRAFT_BACKWARD

void Graph::backward(Var loss) {
  if (!record_) throw Error("backward on a graph without gradient recording");
  if (loss->value.size() != 1) throw Error("backward needs a scalar loss");
  loss->grad = Mat::Ones(1, 1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = *it;
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(n);
    if (n.param) n.param->grad += n.grad;
  }
}

}  // namespace plancraft::nn
