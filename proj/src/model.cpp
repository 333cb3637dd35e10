#include "mptt/model.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "mptt/errors.hpp"
#include "mptt/rng.hpp"

namespace mptt {

GruParams init_gru(std::size_t hidden, std::size_t input, std::size_t output,
                   std::uint64_t seed) {
  if (hidden == 0 || input == 0 || output == 0)
    throw std::invalid_argument("init_gru: dimensions must be positive");
  GruParams p;
  p.dims = {hidden, input, output};
  p.wz = Mat(hidden, input);
  p.wr = Mat(hidden, input);
  p.wh = Mat(hidden, input);
  p.uz = Mat(hidden, hidden);
  p.ur = Mat(hidden, hidden);
  p.uh = Mat(hidden, hidden);
  p.bz.assign(hidden, 0.0);
  p.br.assign(hidden, 0.0);
  p.bh.assign(hidden, 0.0);
  p.w_out = Mat(output, hidden);
  p.b_out.assign(output, 0.0);

  Rng rng(derive_seed(seed, "gru-init"));
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(input));
  const double rec_bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (Mat* m : {&p.wz, &p.wr, &p.wh})
    for (double& w : m->a) w = rng.uniform(-in_bound, in_bound);
  for (Mat* m : {&p.uz, &p.ur, &p.uh})
    for (double& w : m->a) w = rng.uniform(-rec_bound, rec_bound);
  for (double& w : p.w_out.a) w = rng.uniform(-rec_bound, rec_bound);
  return p;
}

GruParams zeros_like(const GruParams& p) {
  GruParams z;
  z.dims = p.dims;
  z.wz = Mat(p.wz.rows, p.wz.cols);
  z.wr = Mat(p.wr.rows, p.wr.cols);
  z.wh = Mat(p.wh.rows, p.wh.cols);
  z.uz = Mat(p.uz.rows, p.uz.cols);
  z.ur = Mat(p.ur.rows, p.ur.cols);
  z.uh = Mat(p.uh.rows, p.uh.cols);
  z.bz.assign(p.bz.size(), 0.0);
  z.br.assign(p.br.size(), 0.0);
  z.bh.assign(p.bh.size(), 0.0);
  z.w_out = Mat(p.w_out.rows, p.w_out.cols);
  z.b_out.assign(p.b_out.size(), 0.0);
  return z;
}

std::vector<std::span<double>> param_spans(GruParams& p) {
  return {p.wz.a, p.wr.a, p.wh.a, p.uz.a, p.ur.a, p.uh.a,
          p.bz,   p.br,   p.bh,   p.w_out.a, p.b_out};
}

std::vector<std::span<const double>> param_spans(const GruParams& p) {
  return {p.wz.a, p.wr.a, p.wh.a, p.uz.a, p.ur.a, p.uh.a,
          p.bz,   p.br,   p.bh,   p.w_out.a, p.b_out};
}

std::vector<NamedArray> named_arrays(GruParams& p) {
  const std::size_t h = p.dims.hidden, d = p.dims.input, k = p.dims.output;
  return {
      {"wz", {h, d}, p.wz.a},       {"wr", {h, d}, p.wr.a}, {"wh", {h, d}, p.wh.a},
      {"uz", {h, h}, p.uz.a},       {"ur", {h, h}, p.ur.a}, {"uh", {h, h}, p.uh.a},
      {"bz", {h}, p.bz},            {"br", {h}, p.br},      {"bh", {h}, p.bh},
      {"w_out", {k, h}, p.w_out.a}, {"b_out", {k}, p.b_out},
  };
}

std::size_t param_count(const GruParams& p) {
  std::size_t n = 0;
  for (const auto& s : param_spans(p)) n += s.size();
  return n;
}

Vec ForwardTrace::hidden_state(std::size_t t) const {
  if (t == 0) return h0;
  if (t > steps) throw std::out_of_range("hidden_state: step out of range");
  Vec h(hidden_dim);
  for (std::size_t i = 0; i < hidden_dim; ++i) h[i] = hidden(t - 1, i);
  return h;
}

ForwardTrace gru_forward(const GruParams& p, const Mat& inputs, const Vec& h0) {
  const std::size_t H = p.dims.hidden, D = p.dims.input, K = p.dims.output;
  const std::size_t W = inputs.rows;
  if (inputs.cols != D) throw std::invalid_argument("gru_forward: input width mismatch");
  if (h0.size() != H) throw std::invalid_argument("gru_forward: h0 size mismatch");
  if (!all_finite(inputs.a) || !all_finite(h0))
    throw NumericError("gru_forward: non-finite input");

  ForwardTrace tr;
  tr.steps = W;
  tr.hidden_dim = H;
  tr.h0 = h0;
  tr.hidden = Mat(W, H);
  tr.update_gate = Mat(W, H);
  tr.reset_gate = Mat(W, H);
  tr.candidate = Mat(W, H);
  tr.reset_hidden = Mat(W, H);
  tr.inputs = inputs;
  tr.outputs = Mat(W, K);

  Vec h_prev = h0;
  Vec aw(H), au(H), z(H), r(H), g(H), rh(H);
  for (std::size_t t = 1; t <= W; ++t) {
    const std::span<const double> x{&inputs.a[(t - 1) * D], D};

    // update gate
    aw.assign(H, 0.0);
    au.assign(H, 0.0);
    matvec_acc(p.wz, x, aw);
    matvec_acc(p.uz, h_prev, au);
    for (std::size_t i = 0; i < H; ++i) z[i] = sigmoid(aw[i] + au[i] + p.bz[i]);

    // reset gate
    aw.assign(H, 0.0);
    au.assign(H, 0.0);
    matvec_acc(p.wr, x, aw);
    matvec_acc(p.ur, h_prev, au);
    for (std::size_t i = 0; i < H; ++i) r[i] = sigmoid(aw[i] + au[i] + p.br[i]);

    for (std::size_t i = 0; i < H; ++i) rh[i] = r[i] * h_prev[i];

    // candidate
    aw.assign(H, 0.0);
    au.assign(H, 0.0);
    matvec_acc(p.wh, x, aw);
    matvec_acc(p.uh, rh, au);
    for (std::size_t i = 0; i < H; ++i) g[i] = std::tanh(aw[i] + au[i] + p.bh[i]);

    for (std::size_t i = 0; i < H; ++i) {
      const double h_new = (1.0 - z[i]) * h_prev[i] + z[i] * g[i];
      if (!std::isfinite(h_new))
        throw NumericError("non-finite hidden state at step " + std::to_string(t));
      tr.hidden(t - 1, i) = h_new;
      tr.update_gate(t - 1, i) = z[i];
      tr.reset_gate(t - 1, i) = r[i];
      tr.candidate(t - 1, i) = g[i];
      tr.reset_hidden(t - 1, i) = rh[i];
      h_prev[i] = h_new;
    }

    std::span<double> y{&tr.outputs.a[(t - 1) * K], K};
    std::fill(y.begin(), y.end(), 0.0);
    matvec_acc(p.w_out, h_prev, y);
    for (std::size_t j = 0; j < K; ++j) y[j] += p.b_out[j];
  }
  return tr;
}

std::pair<GruParams, double> gru_backward(const GruParams& p, const ForwardTrace& tr,
                                          const Mat& targets) {
  const std::size_t H = p.dims.hidden, K = p.dims.output;
  const std::size_t W = tr.steps;
  if (tr.hidden_dim != H || tr.inputs.cols != p.dims.input)
    throw std::invalid_argument("gru_backward: trace/params mismatch");
  if (targets.rows != W || targets.cols != K)
    throw std::invalid_argument("gru_backward: target shape mismatch");

  const double inv_wk = 1.0 / static_cast<double>(W * K);

  double sq_sum = 0.0;
  for (std::size_t t = 0; t < W; ++t)
    for (std::size_t j = 0; j < K; ++j) {
      const double d = tr.outputs(t, j) - targets(t, j);
      sq_sum += d * d;
    }
  const double loss = sq_sum * inv_wk;

  GruParams g = zeros_like(p);
  Vec dh(H, 0.0), dh_prev(H), dy(K);
  Vec da_z(H), da_r(H), da_g(H), drh(H);

  for (std::size_t t = W; t >= 1; --t) {
    const std::span<const double> x{&tr.inputs.a[(t - 1) * p.dims.input], p.dims.input};
    const std::span<const double> h_t{&tr.hidden.a[(t - 1) * H], H};
    const Vec h_before = tr.hidden_state(t - 1);

    for (std::size_t j = 0; j < K; ++j)
      dy[j] = 2.0 * (tr.outputs(t - 1, j) - targets(t - 1, j)) * inv_wk;

    matTvec_acc(p.w_out, dy, dh);
    outer_acc(dy, h_t, g.w_out);
    for (std::size_t j = 0; j < K; ++j) g.b_out[j] += dy[j];

    for (std::size_t i = 0; i < H; ++i) {
      const double z = tr.update_gate(t - 1, i);
      const double gc = tr.candidate(t - 1, i);
      const double dz = dh[i] * (gc - h_before[i]);
      da_z[i] = dz * (z * (1.0 - z));
      const double dg = dh[i] * z;
      da_g[i] = dg * (1.0 - gc * gc);
    }

    drh.assign(H, 0.0);
    matTvec_acc(p.uh, da_g, drh);

    for (std::size_t i = 0; i < H; ++i) {
      const double r = tr.reset_gate(t - 1, i);
      da_r[i] = (drh[i] * h_before[i]) * (r * (1.0 - r));
    }

    for (std::size_t i = 0; i < H; ++i) {
      const double z = tr.update_gate(t - 1, i);
      const double r = tr.reset_gate(t - 1, i);
      dh_prev[i] = dh[i] * (1.0 - z) + r * drh[i];
    }
    matTvec_acc(p.uz, da_z, dh_prev);
    matTvec_acc(p.ur, da_r, dh_prev);

    const std::span<const double> rh{&tr.reset_hidden.a[(t - 1) * H], H};
    outer_acc(da_z, x, g.wz);
    outer_acc(da_z, h_before, g.uz);
    for (std::size_t i = 0; i < H; ++i) g.bz[i] += da_z[i];
    outer_acc(da_r, x, g.wr);
    outer_acc(da_r, h_before, g.ur);
    for (std::size_t i = 0; i < H; ++i) g.br[i] += da_r[i];
    outer_acc(da_g, x, g.wh);
    outer_acc(da_g, rh, g.uh);
    for (std::size_t i = 0; i < H; ++i) g.bh[i] += da_g[i];

    dh = dh_prev;
  }
  return {std::move(g), loss};
}

GruParams finite_diff_grad(const GruParams& p, const Mat& inputs, const Vec& h0,
                           const Mat& targets, double step) {
  GruParams work = p;
  GruParams grads = zeros_like(p);
  auto eval = [&]() {
    const ForwardTrace tr = gru_forward(work, inputs, h0);
    return mse_loss(tr.outputs, targets).first;
  };
  auto spans = param_spans(work);
  auto grad_spans = param_spans(grads);
  for (std::size_t a = 0; a < spans.size(); ++a) {
    for (std::size_t i = 0; i < spans[a].size(); ++i) {
      const double saved = spans[a][i];
      spans[a][i] = saved + step;
      const double plus = eval();
      spans[a][i] = saved - step;
      const double minus = eval();
      spans[a][i] = saved;
      grad_spans[a][i] = (plus - minus) / (2.0 * step);
    }
  }
  return grads;
}

std::pair<double, Mat> mse_loss(const Mat& pred, const Mat& target) {
  if (pred.rows != target.rows || pred.cols != target.cols)
    throw std::invalid_argument("mse_loss: shape mismatch");
  if (pred.rows == 0 || pred.cols == 0) throw std::invalid_argument("mse_loss: empty");
  const double inv = 1.0 / static_cast<double>(pred.rows * pred.cols);
  double sq_sum = 0.0;
  Mat grad(pred.rows, pred.cols);
  for (std::size_t i = 0; i < pred.a.size(); ++i) {
    const double d = pred.a[i] - target.a[i];
    sq_sum += d * d;
    grad.a[i] = 2.0 * d * inv;
  }
  return {sq_sum * inv, std::move(grad)};
}

void adam_step(GruParams& params, const GruParams& grads, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  auto ps = param_spans(params);
  auto gs = param_spans(grads);
  const std::size_t n = param_count(params);
  if (state.m.size() != n)
    throw std::invalid_argument("adam_step: state size mismatch");
  for (const auto& s : gs)
    if (!all_finite(s)) throw NumericError("adam_step: non-finite gradient");

  state.step += 1;
  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  std::size_t off = 0;
  for (std::size_t a = 0; a < ps.size(); ++a) {
    for (std::size_t i = 0; i < ps[a].size(); ++i, ++off) {
      const double gv = gs[a][i];
      state.m[off] = b1 * state.m[off] + (1.0 - b1) * gv;
      state.v[off] = b2 * state.v[off] + (1.0 - b2) * gv * gv;
      const double mhat = state.m[off] / c1;
      const double vhat = state.v[off] / c2;
      ps[a][i] -= lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
    }
  }
}

namespace {

constexpr char kMagic[8] = {'M', 'P', 'T', 'T', 'C', 'K', '0', '1'};

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const GruParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  auto arrays = named_arrays(const_cast<GruParams&>(p));
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& arr : arrays) {
    write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(arr.name.size()));
    out.write(arr.name.data(), static_cast<std::streamsize>(arr.name.size()));
    write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(arr.shape.size()));
    for (const std::size_t d : arr.shape) write_raw<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(arr.data.data()),
              static_cast<std::streamsize>(arr.data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

GruParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: bad magic/version in " + path);

  struct Raw {
    std::vector<std::size_t> shape;
    Vec data;
  };
  std::vector<std::pair<std::string, Raw>> raws;
  const auto n = read_raw<std::uint32_t>(in);
  for (std::uint32_t a = 0; a < n; ++a) {
    const auto name_len = read_raw<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto ndim = read_raw<std::uint32_t>(in);
    Raw raw;
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      raw.shape.push_back(static_cast<std::size_t>(read_raw<std::uint64_t>(in)));
      total *= raw.shape.back();
    }
    raw.data.resize(total);
    in.read(reinterpret_cast<char*>(raw.data.data()),
            static_cast<std::streamsize>(total * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    raws.emplace_back(std::move(name), std::move(raw));
  }

  auto find = [&](const std::string& name) -> Raw& {
    for (auto& [n2, r] : raws)
      if (n2 == name) return r;
    throw std::runtime_error("checkpoint: missing array " + name);
  };
  const auto& wz = find("wz");
  if (wz.shape.size() != 2) throw std::runtime_error("checkpoint: bad wz shape");
  const std::size_t hidden = wz.shape[0], input = wz.shape[1];
  const auto& w_out = find("w_out");
  if (w_out.shape.size() != 2 || w_out.shape[1] != hidden)
    throw std::runtime_error("checkpoint: bad w_out shape");
  const std::size_t output = w_out.shape[0];

  GruParams p = init_gru(hidden, input, output, 0);
  for (auto& arr : named_arrays(p)) {
    Raw& raw = find(arr.name);
    if (raw.shape != arr.shape) throw std::runtime_error("checkpoint: shape mismatch for " + arr.name);
    std::copy(raw.data.begin(), raw.data.end(), arr.data.begin());
  }
  return p;
}

}  // namespace mptt
