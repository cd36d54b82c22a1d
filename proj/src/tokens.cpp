#include "wisense/tokens.hpp"

#include <cmath>

namespace wisense::tok {

TokenTensor build_tokens(const synth::AmpPhase& ap, Index window_start, const NormStats& stats, int n_packets) {
  const int L = ap.n_links, S = ap.n_subcarriers;
  require_shape(ap.amp.cols() == static_cast<Index>(L) * S && ap.phase.cols() == ap.amp.cols() &&
                    ap.phase.rows() == ap.amp.rows(),
                "build_tokens: amplitude/phase layout mismatch");
  if (n_packets < 1 || window_start < 0 || window_start + n_packets > ap.amp.rows())
    throw std::out_of_range("build_tokens: window [" + std::to_string(window_start) + ", +" +
                            std::to_string(n_packets) + ") outside stream of " + std::to_string(ap.amp.rows()) +
                            " packets");
  TokenTensor out;
  out.start_packet = window_start;
  out.n_packets = n_packets;
  out.tokens.resize(static_cast<Index>(L) * n_packets, 2 * S);
  for (int l = 0; l < L; ++l) {
    for (int p = 0; p < n_packets; ++p) {
      const Index row = static_cast<Index>(l) * n_packets + p;
      const Index t = window_start + p;
      out.tokens.row(row).head(S) = ap.amp.row(t).segment(static_cast<Index>(l) * S, S);
      out.tokens.row(row).tail(S) = ap.phase.row(t).segment(static_cast<Index>(l) * S, S);
    }
  }
  normalize_tokens(out.tokens, stats, S);
  return out;
}

void normalize_tokens(Matrix& raw, const NormStats& stats, int n_subcarriers) {
  require_shape(raw.cols() == 2 * n_subcarriers, "normalize_tokens: expected " + std::to_string(2 * n_subcarriers) +
                                                     " features, got " + std::to_string(raw.cols()));
  if (stats == NormStats::identity()) return;
  raw.leftCols(n_subcarriers).array() = (raw.leftCols(n_subcarriers).array() - stats.amp_mean) / stats.amp_std;
  raw.rightCols(n_subcarriers).array() =
      (raw.rightCols(n_subcarriers).array() - stats.phase_mean) / stats.phase_std;
}

NormStats fit_norm_stats(std::span<const Matrix> raw_windows, int n_subcarriers) {
  if (raw_windows.empty()) throw std::invalid_argument("fit_norm_stats: no windows");
  double sa = 0, sa2 = 0, sp = 0, sp2 = 0;
  double n = 0;
  for (const auto& w : raw_windows) {
    require_shape(w.cols() == 2 * n_subcarriers, "fit_norm_stats: feature count mismatch");
    const auto a = w.leftCols(n_subcarriers).array();
    const auto p = w.rightCols(n_subcarriers).array();
    sa += a.sum();
    sa2 += a.square().sum();
    sp += p.sum();
    sp2 += p.square().sum();
    n += static_cast<double>(a.size());
  }
  NormStats s;
  s.amp_mean = sa / n;
  s.phase_mean = sp / n;
  const double va = std::max(0.0, sa2 / n - s.amp_mean * s.amp_mean);
  const double vp = std::max(0.0, sp2 / n - s.phase_mean * s.phase_mean);
  s.amp_std = va > 1e-24 ? std::sqrt(va) : 1.0;
  s.phase_std = vp > 1e-24 ? std::sqrt(vp) : 1.0;
  return s;
}

Matrix project_tokens(const Matrix& raw, const Matrix& weight, const RowVector& bias) {
  require_shape(weight.cols() == raw.cols(), "project_tokens: W is " + dims(weight) + " but tokens are " + dims(raw));
  require_shape(bias.size() == weight.rows(), "project_tokens: bias length mismatch");
  Matrix out = raw * weight.transpose();
  out.rowwise() += bias;
  return out;
}

Matrix add_ste(const Matrix& projected, const Matrix& ste) {
  require_shape(projected.rows() == ste.rows() && projected.cols() == ste.cols(),
                "add_ste: tokens " + dims(projected) + " vs table " + dims(ste));
  return projected + ste;
}

}  // namespace wisense::tok
