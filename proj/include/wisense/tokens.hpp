#pragma once

#include "wisense/channel.hpp"
#include "wisense/types.hpp"

#include <span>

/// Spatio-temporal CSI tokens: one token per (link, packet) of a window,
/// features are the amplitude and phase of every subcarrier.
namespace wisense::tok {

inline constexpr int kDefaultWindowPackets = 20;

/// Scalar z-normalization of the amplitude and phase halves of a token.
struct NormStats {
  double amp_mean = 0.0;
  double amp_std = 1.0;
  double phase_mean = 0.0;
  double phase_std = 1.0;

  static NormStats identity() { return {}; }
  bool operator==(const NormStats&) const = default;
};

struct TokenTensor {
  Matrix tokens;  // [n_links * n_packets, feat]
  Index start_packet = 0;
  int n_packets = kDefaultWindowPackets;
};

/// Token k = link * n_packets + packet_offset, features
/// [amp(0..S-1) | phase(0..S-1)] after normalization.
TokenTensor build_tokens(const synth::AmpPhase& ap, Index window_start, const NormStats& stats,
                         int n_packets = kDefaultWindowPackets);

/// Statistics over the amplitude and phase halves of raw (identity
/// normalized) token windows. Deterministic in its input.
NormStats fit_norm_stats(std::span<const Matrix> raw_windows, int n_subcarriers);

/// Apply `stats` to a raw window in place.
void normalize_tokens(Matrix& raw, const NormStats& stats, int n_subcarriers);

/// tokens * W^T + b for W [d_model, feat].
Matrix project_tokens(const Matrix& raw, const Matrix& weight, const RowVector& bias);

/// Elementwise projected + ste.
Matrix add_ste(const Matrix& projected, const Matrix& ste);

}  // namespace wisense::tok
