#include "pdintent/nets.hpp"

#include <cmath>

namespace pdintent {

using Eigen::Map;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using CMap = Map<const MatrixXd>;
using MMap = Map<MatrixXd>;
using CVec = Map<const VectorXd>;
using MVec = Map<VectorXd>;

FlatBatch make_flat_batch(std::span<const Sample> samples, std::span<const std::size_t> idx,
                          std::span<const int> class_of) {
  FlatBatch b;
  const auto d = static_cast<Eigen::Index>(samples[idx.front()].features.rounds.size() * kFeatureWidth);
  b.x.resize(d, static_cast<Eigen::Index>(idx.size()));
  b.y.reserve(idx.size());
  for (std::size_t c = 0; c < idx.size(); ++c) {
    const Sample& s = samples[idx[c]];
    Eigen::Index r = 0;
    for (const auto& row : s.features.rounds)
      for (double v : row) b.x(r++, static_cast<Eigen::Index>(c)) = v;
    b.y.push_back(class_of[static_cast<std::size_t>(s.label)]);
  }
  return b;
}

SeqBatch make_seq_batch(std::span<const Sample> samples, std::span<const std::size_t> idx,
                        std::span<const int> class_of) {
  SeqBatch b;
  const std::size_t len = samples[idx.front()].features.rounds.size();
  b.steps.assign(len, MatrixXd(kFeatureWidth, static_cast<Eigen::Index>(idx.size())));
  for (std::size_t c = 0; c < idx.size(); ++c) {
    const Sample& s = samples[idx[c]];
    for (std::size_t t = 0; t < len; ++t)
      for (int k = 0; k < kFeatureWidth; ++k)
        b.steps[t](k, static_cast<Eigen::Index>(c)) = s.features.rounds[t][static_cast<std::size_t>(k)];
    b.y.push_back(class_of[static_cast<std::size_t>(s.label)]);
  }
  return b;
}

MatrixXd softmax_columns(const MatrixXd& logits) {
  MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double m = logits.col(c).maxCoeff();
    p.col(c) = (logits.col(c).array() - m).exp().matrix();
    p.col(c) /= p.col(c).sum();
  }
  return p;
}

namespace {

/// Mean cross-entropy; overwrites `p` with dL/dlogits.
double cross_entropy(MatrixXd& p, const std::vector<int>& y) {
  const double n = static_cast<double>(y.size());
  double loss = 0.0;
  for (std::size_t c = 0; c < y.size(); ++c) {
    const auto col = static_cast<Eigen::Index>(c);
    loss -= std::log(std::max(p(y[c], col), 1e-300));
    p(y[c], col) -= 1.0;
  }
  p /= n;
  return loss / n;
}

void fill_normal(std::span<double> v, double scale, Rng& rng) {
  for (double& x : v) x = rng.normal() * scale;
}

}  // namespace

// ---- logistic regression ----

LogisticNet::LogisticNet(int inputs_, int classes_, double l2_)
    : inputs(inputs_), classes(classes_), l2(l2_), params(static_cast<std::size_t>(classes_ * (inputs_ + 1)), 0.0) {}

void LogisticNet::init(Rng& rng) { fill_normal(params, 0.01, rng); }

MatrixXd LogisticNet::logits(const MatrixXd& x) const {
  CMap w(params.data(), classes, inputs);
  CVec b(params.data() + classes * inputs, classes);
  return (w * x).colwise() + b;
}

double LogisticNet::loss(const FlatBatch& batch, std::vector<double>* grad) const {
  CMap w(params.data(), classes, inputs);
  MatrixXd p = softmax_columns(logits(batch.x));
  double l = cross_entropy(p, batch.y) + 0.5 * l2 * w.squaredNorm();
  if (grad) {
    grad->assign(params.size(), 0.0);
    MMap dw(grad->data(), classes, inputs);
    MVec db(grad->data() + classes * inputs, classes);
    dw = p * batch.x.transpose() + l2 * w;
    db = p.rowwise().sum();
  }
  return l;
}

// ---- feedforward ----

FeedforwardNet::FeedforwardNet(int inputs_, int hidden_, int classes_, double l2_)
    : inputs(inputs_),
      hidden(hidden_),
      classes(classes_),
      l2(l2_),
      params(static_cast<std::size_t>(hidden_ * inputs_ + hidden_ + classes_ * hidden_ + classes_), 0.0) {}

void FeedforwardNet::init(Rng& rng) {
  double* p = params.data();
  fill_normal({p, static_cast<std::size_t>(hidden * inputs)}, 1.0 / std::sqrt(inputs), rng);
  p += hidden * inputs + hidden;
  fill_normal({p, static_cast<std::size_t>(classes * hidden)}, 1.0 / std::sqrt(hidden), rng);
}

MatrixXd FeedforwardNet::logits(const MatrixXd& x) const {
  const double* p = params.data();
  CMap w1(p, hidden, inputs);
  CVec b1(p + hidden * inputs, hidden);
  CMap w2(p + hidden * inputs + hidden, classes, hidden);
  CVec b2(p + hidden * inputs + hidden + classes * hidden, classes);
  const MatrixXd h = ((w1 * x).colwise() + b1).array().tanh().matrix();
  return (w2 * h).colwise() + b2;
}

double FeedforwardNet::loss(const FlatBatch& batch, std::vector<double>* grad) const {
  const double* p = params.data();
  CMap w1(p, hidden, inputs);
  CVec b1(p + hidden * inputs, hidden);
  CMap w2(p + hidden * inputs + hidden, classes, hidden);
  CVec b2(p + hidden * inputs + hidden + classes * hidden, classes);

  const MatrixXd h = ((w1 * batch.x).colwise() + b1).array().tanh().matrix();
  MatrixXd dz = softmax_columns((w2 * h).colwise() + b2);
  double l = cross_entropy(dz, batch.y) + 0.5 * l2 * (w1.squaredNorm() + w2.squaredNorm());
  if (grad) {
    grad->assign(params.size(), 0.0);
    double* g = grad->data();
    MMap dw1(g, hidden, inputs);
    MVec db1(g + hidden * inputs, hidden);
    MMap dw2(g + hidden * inputs + hidden, classes, hidden);
    MVec db2(g + hidden * inputs + hidden + classes * hidden, classes);
    dw2 = dz * h.transpose() + l2 * w2;
    db2 = dz.rowwise().sum();
    const MatrixXd da = ((w2.transpose() * dz).array() * (1.0 - h.array().square())).matrix();
    dw1 = da * batch.x.transpose() + l2 * w1;
    db1 = da.rowwise().sum();
  }
  return l;
}

// ---- LSTM ----

namespace {

struct LstmLayout {
  Eigen::Index in, hid, cls;
  Eigen::Index wx() const { return 0; }
  Eigen::Index wh() const { return 4 * hid * in; }
  Eigen::Index b() const { return wh() + 4 * hid * hid; }
  Eigen::Index wy() const { return b() + 4 * hid; }
  Eigen::Index by() const { return wy() + cls * hid; }
  Eigen::Index size() const { return by() + cls; }
};

MatrixXd sigmoid(const MatrixXd& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

struct StepCache {
  MatrixXd i, f, g, o, c, tanh_c, h;
};

}  // namespace

LstmNet::LstmNet(int inputs_, int hidden_, int classes_, double l2_)
    : inputs(inputs_), hidden(hidden_), classes(classes_), l2(l2_) {
  params.assign(static_cast<std::size_t>(LstmLayout{inputs, hidden, classes}.size()), 0.0);
}

void LstmNet::init(Rng& rng) {
  const LstmLayout L{inputs, hidden, classes};
  const double s = 1.0 / std::sqrt(static_cast<double>(inputs + hidden));
  fill_normal({params.data(), static_cast<std::size_t>(L.b())}, s, rng);
  // Forget-gate bias starts at 1 so memory is kept early in training.
  for (Eigen::Index k = 0; k < 4 * L.hid; ++k) params[static_cast<std::size_t>(L.b() + k)] = (k >= L.hid && k < 2 * L.hid) ? 1.0 : 0.0;
  fill_normal({params.data() + L.wy(), static_cast<std::size_t>(L.cls * L.hid)}, 1.0 / std::sqrt(hidden), rng);
}

MatrixXd LstmNet::logits(std::span<const MatrixXd> steps) const {
  const LstmLayout L{inputs, hidden, classes};
  const double* p = params.data();
  CMap wx(p + L.wx(), 4 * L.hid, L.in);
  CMap wh(p + L.wh(), 4 * L.hid, L.hid);
  CVec b(p + L.b(), 4 * L.hid);
  CMap wy(p + L.wy(), L.cls, L.hid);
  CVec by(p + L.by(), L.cls);
  const Eigen::Index n = steps.front().cols();
  MatrixXd h = MatrixXd::Zero(L.hid, n), c = MatrixXd::Zero(L.hid, n);
  for (const auto& x : steps) {
    const MatrixXd z = ((wx * x + wh * h).colwise() + b);
    const MatrixXd i = sigmoid(z.middleRows(0, L.hid));
    const MatrixXd f = sigmoid(z.middleRows(L.hid, L.hid));
    const MatrixXd g = z.middleRows(2 * L.hid, L.hid).array().tanh().matrix();
    const MatrixXd o = sigmoid(z.middleRows(3 * L.hid, L.hid));
    c = (f.array() * c.array() + i.array() * g.array()).matrix();
    h = (o.array() * c.array().tanh()).matrix();
  }
  return (wy * h).colwise() + by;
}

double LstmNet::loss(const SeqBatch& batch, std::vector<double>* grad) const {
  const LstmLayout L{inputs, hidden, classes};
  const double* p = params.data();
  CMap wx(p + L.wx(), 4 * L.hid, L.in);
  CMap wh(p + L.wh(), 4 * L.hid, L.hid);
  CVec b(p + L.b(), 4 * L.hid);
  CMap wy(p + L.wy(), L.cls, L.hid);
  CVec by(p + L.by(), L.cls);

  const std::size_t T = batch.steps.size();
  const Eigen::Index n = batch.steps.front().cols();
  std::vector<StepCache> cache(T);
  MatrixXd h = MatrixXd::Zero(L.hid, n), c = MatrixXd::Zero(L.hid, n);
  for (std::size_t t = 0; t < T; ++t) {
    const MatrixXd z = ((wx * batch.steps[t] + wh * h).colwise() + b);
    StepCache& s = cache[t];
    s.i = sigmoid(z.middleRows(0, L.hid));
    s.f = sigmoid(z.middleRows(L.hid, L.hid));
    s.g = z.middleRows(2 * L.hid, L.hid).array().tanh().matrix();
    s.o = sigmoid(z.middleRows(3 * L.hid, L.hid));
    s.c = (s.f.array() * c.array() + s.i.array() * s.g.array()).matrix();
    s.tanh_c = s.c.array().tanh().matrix();
    s.h = (s.o.array() * s.tanh_c.array()).matrix();
    c = s.c;
    h = s.h;
  }
  MatrixXd dlogits = softmax_columns((wy * h).colwise() + by);
  const double l = cross_entropy(dlogits, batch.y) +
                   0.5 * l2 * (wx.squaredNorm() + wh.squaredNorm() + wy.squaredNorm());
  if (!grad) return l;

  grad->assign(params.size(), 0.0);
  double* gp = grad->data();
  MMap dwx(gp + L.wx(), 4 * L.hid, L.in);
  MMap dwh(gp + L.wh(), 4 * L.hid, L.hid);
  MVec db(gp + L.b(), 4 * L.hid);
  MMap dwy(gp + L.wy(), L.cls, L.hid);
  MVec dby(gp + L.by(), L.cls);

  dwy = dlogits * h.transpose() + l2 * wy;
  dby = dlogits.rowwise().sum();
  MatrixXd dh = wy.transpose() * dlogits;
  MatrixXd dc = MatrixXd::Zero(L.hid, n);
  MatrixXd dz(4 * L.hid, n);
  const MatrixXd zeros = MatrixXd::Zero(L.hid, n);
  for (std::size_t k = T; k-- > 0;) {
    const StepCache& s = cache[k];
    const MatrixXd& c_prev = k > 0 ? cache[k - 1].c : zeros;
    const MatrixXd& h_prev = k > 0 ? cache[k - 1].h : zeros;
    const auto d_o = dh.array() * s.tanh_c.array();
    dc.array() += dh.array() * s.o.array() * (1.0 - s.tanh_c.array().square());
    dz.middleRows(0, L.hid) = (dc.array() * s.g.array() * s.i.array() * (1.0 - s.i.array())).matrix();
    dz.middleRows(L.hid, L.hid) = (dc.array() * c_prev.array() * s.f.array() * (1.0 - s.f.array())).matrix();
    dz.middleRows(2 * L.hid, L.hid) = (dc.array() * s.i.array() * (1.0 - s.g.array().square())).matrix();
    dz.middleRows(3 * L.hid, L.hid) = (d_o * s.o.array() * (1.0 - s.o.array())).matrix();
    dwx.noalias() += dz * batch.steps[k].transpose();
    dwh.noalias() += dz * h_prev.transpose();
    db += dz.rowwise().sum();
    dh = wh.transpose() * dz;
    dc = (dc.array() * s.f.array()).matrix();
  }
  dwx += l2 * wx;
  dwh += l2 * wh;
  return l;
}

// ---- Adam ----

Adam::Adam(std::size_t n, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::vector<double>& params, const std::vector<double>& grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    m_[k] = b1_ * m_[k] + (1.0 - b1_) * grad[k];
    v_[k] = b2_ * v_[k] + (1.0 - b2_) * grad[k] * grad[k];
    params[k] -= lr_ * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
  }
}

}  // namespace pdintent
