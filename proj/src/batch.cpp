#include "mptt/batch.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mptt/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mptt {

namespace {

// Runs fn(b0, b1) over contiguous slices of [0, n). Sequences are mutually
// independent, so each thread owns a column range for the whole kernel; the
// per-element arithmetic is unchanged by the split.
template <typename Fn>
void for_each_slice(std::size_t n, int jobs, Fn&& fn) {
#ifdef _OPENMP
  if (jobs > 1 && n > 1) {
    const int threads = static_cast<int>(std::min<std::size_t>(n, static_cast<std::size_t>(jobs)));
#pragma omp parallel num_threads(threads)
    {
      const std::size_t tid = static_cast<std::size_t>(omp_get_thread_num());
      const std::size_t nt = static_cast<std::size_t>(omp_get_num_threads());
      const std::size_t chunk = (n + nt - 1) / nt;
      const std::size_t b0 = std::min(n, tid * chunk);
      const std::size_t b1 = std::min(n, b0 + chunk);
      if (b0 < b1) fn(b0, b1);
    }
    return;
  }
#else
  (void)jobs;
#endif
  fn(0, n);
}

}  // namespace

Vec BatchTrace::hidden_state(std::size_t t, std::size_t b) const {
  Vec h(hidden_dim);
  if (t == 0) {
    for (std::size_t i = 0; i < hidden_dim; ++i) h[i] = h0[i * batch + b];
    return h;
  }
  if (t > steps) throw std::out_of_range("hidden_state: step out of range");
  const double* block = &hidden[(t - 1) * hidden_dim * batch];
  for (std::size_t i = 0; i < hidden_dim; ++i) h[i] = block[i * batch + b];
  return h;
}

Vec BatchTrace::output_row(std::size_t t, std::size_t b) const {
  if (t < 1 || t > steps) throw std::out_of_range("output_row: step out of range");
  Vec y(output_dim);
  const double* block = &outputs[(t - 1) * output_dim * batch];
  for (std::size_t j = 0; j < output_dim; ++j) y[j] = block[j * batch + b];
  return y;
}

BatchTrace gru_forward_batch(const GruParams& p,
                             std::span<const Mat* const> inputs,
                             std::span<const std::span<const double>> h0s,
                             std::span<const BatchFeedback> feedback,
                             int jobs) {
  const std::size_t B = inputs.size();
  if (B == 0) throw std::invalid_argument("gru_forward_batch: empty batch");
  if (h0s.size() != B) throw std::invalid_argument("gru_forward_batch: h0 count mismatch");
  const bool with_feedback = !feedback.empty();
  if (with_feedback && feedback.size() != B)
    throw std::invalid_argument("gru_forward_batch: feedback count mismatch");

  const std::size_t H = p.dims.hidden, D = p.dims.input, K = p.dims.output;
  const std::size_t raw_d = with_feedback ? D - K : D;
  const std::size_t W = inputs[0]->rows;
  for (const Mat* m : inputs) {
    if (m->rows != W) throw std::invalid_argument("gru_forward_batch: ragged sequence lengths");
    if (m->cols != raw_d) throw std::invalid_argument("gru_forward_batch: input width mismatch");
  }
  for (const auto& h0 : h0s)
    if (!h0.empty() && h0.size() != H)
      throw std::invalid_argument("gru_forward_batch: h0 size mismatch");

  BatchTrace tr;
  tr.steps = W;
  tr.batch = B;
  tr.hidden_dim = H;
  tr.input_dim = D;
  tr.output_dim = K;
  tr.h0.assign(H * B, 0.0);
  tr.hidden.assign(W * H * B, 0.0);
  tr.update_gate.assign(W * H * B, 0.0);
  tr.reset_gate.assign(W * H * B, 0.0);
  tr.candidate.assign(W * H * B, 0.0);
  tr.reset_hidden.assign(W * H * B, 0.0);
  tr.inputs.assign(W * D * B, 0.0);
  tr.outputs.assign(W * K * B, 0.0);

  for (std::size_t b = 0; b < B; ++b)
    if (!h0s[b].empty())
      for (std::size_t i = 0; i < H; ++i) tr.h0[i * B + b] = h0s[b][i];

  Vec acc_w(H * B), acc_u(H * B);
  std::atomic<bool> failed{false};
  std::string failure;

  auto run = [&](std::size_t b0, std::size_t b1) {
    for (std::size_t t = 1; t <= W; ++t) {
      double* x_block = &tr.inputs[(t - 1) * D * B];
      const double* h_prev = (t == 1) ? tr.h0.data() : &tr.hidden[(t - 2) * H * B];

      for (std::size_t b = b0; b < b1; ++b) {
        const Mat& xm = *inputs[b];
        for (std::size_t k = 0; k < raw_d; ++k) x_block[k * B + b] = xm(t - 1, k);
        if (with_feedback) {
          const BatchFeedback& fb = feedback[b];
          for (std::size_t j = 0; j < K; ++j) {
            double feed;
            if (t == 1)
              feed = fb.init_feed[j];
            else if (!fb.use_observed.empty() && fb.use_observed[t - 1])
              feed = (*fb.observed)(t - 2, j);
            else
              feed = tr.outputs[(t - 2) * K * B + j * B + b];
            x_block[(raw_d + j) * B + b] = feed;
          }
        }
      }

      double* z_block = &tr.update_gate[(t - 1) * H * B];
      double* r_block = &tr.reset_gate[(t - 1) * H * B];
      double* g_block = &tr.candidate[(t - 1) * H * B];
      double* rh_block = &tr.reset_hidden[(t - 1) * H * B];
      double* h_block = &tr.hidden[(t - 1) * H * B];
      double* y_block = &tr.outputs[(t - 1) * K * B];

      auto gate_preact = [&](const Mat& w, const Mat& u, const double* rec) {
        for (std::size_t i = 0; i < H; ++i) {
          double* aw = &acc_w[i * B];
          double* au = &acc_u[i * B];
          for (std::size_t b = b0; b < b1; ++b) aw[b] = 0.0;
          for (std::size_t b = b0; b < b1; ++b) au[b] = 0.0;
          const double* wrow = &w.a[i * D];
          for (std::size_t k = 0; k < D; ++k) {
            const double wv = wrow[k];
            const double* xr = &x_block[k * B];
            for (std::size_t b = b0; b < b1; ++b) aw[b] += wv * xr[b];
          }
          const double* urow = &u.a[i * H];
          for (std::size_t k = 0; k < H; ++k) {
            const double uv = urow[k];
            const double* hr = &rec[k * B];
            for (std::size_t b = b0; b < b1; ++b) au[b] += uv * hr[b];
          }
        }
      };

      gate_preact(p.wz, p.uz, h_prev);
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t b = b0; b < b1; ++b)
          z_block[i * B + b] = sigmoid(acc_w[i * B + b] + acc_u[i * B + b] + p.bz[i]);

      gate_preact(p.wr, p.ur, h_prev);
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t b = b0; b < b1; ++b)
          r_block[i * B + b] = sigmoid(acc_w[i * B + b] + acc_u[i * B + b] + p.br[i]);

      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t b = b0; b < b1; ++b)
          rh_block[i * B + b] = r_block[i * B + b] * h_prev[i * B + b];

      gate_preact(p.wh, p.uh, rh_block);
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t b = b0; b < b1; ++b)
          g_block[i * B + b] = std::tanh(acc_w[i * B + b] + acc_u[i * B + b] + p.bh[i]);

      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t b = b0; b < b1; ++b) {
          const double h_new = (1.0 - z_block[i * B + b]) * h_prev[i * B + b] +
                               z_block[i * B + b] * g_block[i * B + b];
          h_block[i * B + b] = h_new;
        }
      for (std::size_t b = b0; b < b1; ++b)
        for (std::size_t i = 0; i < H; ++i)
          if (!std::isfinite(h_block[i * B + b])) {
            if (!failed.exchange(true))
              failure = "non-finite hidden state at step " + std::to_string(t) +
                        ", sequence slot " + std::to_string(b);
            return;
          }

      for (std::size_t j = 0; j < K; ++j) {
        double* yr = &y_block[j * B];
        for (std::size_t b = b0; b < b1; ++b) yr[b] = 0.0;
        const double* orow = &p.w_out.a[j * H];
        for (std::size_t i = 0; i < H; ++i) {
          const double ov = orow[i];
          const double* hr = &h_block[i * B];
          for (std::size_t b = b0; b < b1; ++b) yr[b] += ov * hr[b];
        }
        const double bj = p.b_out[j];
        for (std::size_t b = b0; b < b1; ++b) yr[b] += bj;
      }
    }
  };

  for_each_slice(B, jobs, run);
  if (failed.load()) throw NumericError(failure);
  return tr;
}

std::pair<GruParams, double> gru_backward_batch(const GruParams& p, const BatchTrace& tr,
                                                std::span<const Mat* const> targets,
                                                int jobs) {
  const std::size_t B = tr.batch, H = tr.hidden_dim, D = tr.input_dim, K = tr.output_dim;
  const std::size_t W = tr.steps;
  if (targets.size() != B) throw std::invalid_argument("gru_backward_batch: target count mismatch");
  if (p.dims.hidden != H || p.dims.input != D || p.dims.output != K)
    throw std::invalid_argument("gru_backward_batch: trace/params mismatch");
  for (const Mat* m : targets)
    if (m->rows != W || m->cols != K)
      throw std::invalid_argument("gru_backward_batch: target shape mismatch");

  const double inv_wk = 1.0 / static_cast<double>(W * K);

  // Per-sequence gradient planes laid out [param row][param col][b]; each
  // sequence accumulates independently and the planes are reduced in
  // ascending slot order afterwards, keeping results thread-count invariant.
  Vec gwz(H * D * B, 0.0), gwr(H * D * B, 0.0), gwh(H * D * B, 0.0);
  Vec guz(H * H * B, 0.0), gur(H * H * B, 0.0), guh(H * H * B, 0.0);
  Vec gbz(H * B, 0.0), gbr(H * B, 0.0), gbh(H * B, 0.0);
  Vec gwo(K * H * B, 0.0), gbo(K * B, 0.0);
  Vec losses(B, 0.0);

  Vec dh(H * B), dh_prev(H * B), dy(K * B);
  Vec da_z(H * B), da_r(H * B), da_g(H * B), drh(H * B);

  auto run = [&](std::size_t b0, std::size_t b1) {
    for (std::size_t b = b0; b < b1; ++b) {
      const Mat& tgt = *targets[b];
      double sq = 0.0;
      for (std::size_t t = 0; t < W; ++t)
        for (std::size_t j = 0; j < K; ++j) {
          const double d = tr.outputs[t * K * B + j * B + b] - tgt(t, j);
          sq += d * d;
        }
      losses[b] = sq * inv_wk;
    }

    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t b = b0; b < b1; ++b) dh[i * B + b] = 0.0;

    for (std::size_t t = W; t >= 1; --t) {
      const double* x_block = &tr.inputs[(t - 1) * D * B];
      const double* h_block = &tr.hidden[(t - 1) * H * B];
      const double* h_before = (t == 1) ? tr.h0.data() : &tr.hidden[(t - 2) * H * B];
      const double* z_block = &tr.update_gate[(t - 1) * H * B];
      const double* r_block = &tr.reset_gate[(t - 1) * H * B];
      const double* g_block = &tr.candidate[(t - 1) * H * B];
      const double* rh_block = &tr.reset_hidden[(t - 1) * H * B];
      const double* y_block = &tr.outputs[(t - 1) * K * B];

      for (std::size_t j = 0; j < K; ++j)
        for (std::size_t b = b0; b < b1; ++b)
          dy[j * B + b] = 2.0 * (y_block[j * B + b] - (*targets[b])(t - 1, j)) * inv_wk;

      for (std::size_t j = 0; j < K; ++j) {
        const double* orow = &p.w_out.a[j * H];
        for (std::size_t i = 0; i < H; ++i) {
          const double ov = orow[i];
          for (std::size_t b = b0; b < b1; ++b) dh[i * B + b] += ov * dy[j * B + b];
        }
      }
      for (std::size_t j = 0; j < K; ++j)
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t b = b0; b < b1; ++b)
            gwo[(j * H + i) * B + b] += dy[j * B + b] * h_block[i * B + b];
      for (std::size_t j = 0; j < K; ++j)
        for (std::size_t b = b0; b < b1; ++b) gbo[j * B + b] += dy[j * B + b];

      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t b = b0; b < b1; ++b) {
          const std::size_t ib = i * B + b;
          const double z = z_block[ib];
          const double gc = g_block[ib];
          const double dz = dh[ib] * (gc - h_before[ib]);
          da_z[ib] = dz * (z * (1.0 - z));
          const double dg = dh[ib] * z;
          da_g[ib] = dg * (1.0 - gc * gc);
        }

      for (std::size_t k = 0; k < H; ++k)
        for (std::size_t b = b0; b < b1; ++b) drh[k * B + b] = 0.0;
      for (std::size_t i = 0; i < H; ++i) {
        const double* urow = &p.uh.a[i * H];
        for (std::size_t k = 0; k < H; ++k) {
          const double uv = urow[k];
          for (std::size_t b = b0; b < b1; ++b) drh[k * B + b] += uv * da_g[i * B + b];
        }
      }

      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t b = b0; b < b1; ++b) {
          const std::size_t ib = i * B + b;
          const double r = r_block[ib];
          da_r[ib] = (drh[ib] * h_before[ib]) * (r * (1.0 - r));
        }

      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t b = b0; b < b1; ++b) {
          const std::size_t ib = i * B + b;
          dh_prev[ib] = dh[ib] * (1.0 - z_block[ib]) + r_block[ib] * drh[ib];
        }
      for (std::size_t i = 0; i < H; ++i) {
        const double* urow = &p.uz.a[i * H];
        for (std::size_t k = 0; k < H; ++k) {
          const double uv = urow[k];
          for (std::size_t b = b0; b < b1; ++b) dh_prev[k * B + b] += uv * da_z[i * B + b];
        }
      }
      for (std::size_t i = 0; i < H; ++i) {
        const double* urow = &p.ur.a[i * H];
        for (std::size_t k = 0; k < H; ++k) {
          const double uv = urow[k];
          for (std::size_t b = b0; b < b1; ++b) dh_prev[k * B + b] += uv * da_r[i * B + b];
        }
      }

      auto weight_grads = [&](const Vec& da, Vec& gw, Vec& gu, Vec& gb, const double* rec) {
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t k = 0; k < D; ++k)
            for (std::size_t b = b0; b < b1; ++b)
              gw[(i * D + k) * B + b] += da[i * B + b] * x_block[k * B + b];
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t k = 0; k < H; ++k)
            for (std::size_t b = b0; b < b1; ++b)
              gu[(i * H + k) * B + b] += da[i * B + b] * rec[k * B + b];
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t b = b0; b < b1; ++b) gb[i * B + b] += da[i * B + b];
      };
      weight_grads(da_z, gwz, guz, gbz, h_before);
      weight_grads(da_r, gwr, gur, gbr, h_before);
      weight_grads(da_g, gwh, guh, gbh, rh_block);

      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t b = b0; b < b1; ++b) dh[i * B + b] = dh_prev[i * B + b];
    }
  };

  for_each_slice(B, jobs, run);

  // Ordered reduction: mean over the batch, summed in ascending slot order.
  GruParams g = zeros_like(p);
  const double inv_b = 1.0 / static_cast<double>(B);
  auto reduce = [&](const Vec& plane, std::span<double> out) {
    for (std::size_t e = 0; e < out.size(); ++e) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b) s += plane[e * B + b];
      out[e] = s * inv_b;
    }
  };
  reduce(gwz, g.wz.a);
  reduce(gwr, g.wr.a);
  reduce(gwh, g.wh.a);
  reduce(guz, g.uz.a);
  reduce(gur, g.ur.a);
  reduce(guh, g.uh.a);
  reduce(gbz, g.bz);
  reduce(gbr, g.br);
  reduce(gbh, g.bh);
  reduce(gwo, g.w_out.a);
  reduce(gbo, g.b_out);

  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) loss += losses[b];
  return {std::move(g), loss * inv_b};
}

}  // namespace mptt
