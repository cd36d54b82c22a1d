#pragma once

#include "wisense/types.hpp"

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

/// Synthetic CSI generation from motion scripts.
///
/// Each received sample follows the linear model Y = H X + N with a unit
/// pilot X, so Y observes the channel directly. The channel is the sum of a
/// fixed multipath component and one moving reflector per active primitive.
namespace wisense::synth {

using Complex = std::complex<double>;
/// Rows are packets; column `link * n_subcarriers + subcarrier`.
using CsiMatrix = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class BodyPart { upper, lower, torso };

std::string to_string(BodyPart part);
BodyPart body_part_from_string(const std::string& name);

struct ChannelConfig {
  int n_links = 9;
  int n_subcarriers = 30;
  double packet_rate = 300.0;         // packets / s
  double carrier_wavelength = 0.06;   // m
  double noise_sigma = 0.01;          // per real component
  int n_static_paths = 3;
  std::uint64_t seed = 0;             // noise stream
  std::uint64_t static_seed = 0;      // room: static paths and reflector geometry
  double subcarrier_spacing = 312.5e3;  // Hz
  int antennas_per_receiver = 3;

  void validate() const;
  int columns() const { return n_links * n_subcarriers; }
};

struct MotionPrimitive {
  int id = 0;
  std::string name;
  BodyPart body_part = BodyPart::upper;
  double peak_radial_velocity = 0.0;  // m/s, signed (+ approaching)
  double duration = 0.0;              // s
  double reflectivity = 0.0;

  void validate() const;
};

struct ScriptEntry {
  MotionPrimitive primitive;
  double start_time = 0.0;
  int subject_id = 0;
};

struct MotionScript {
  std::vector<ScriptEntry> entries;
  double total_duration = 0.0;

  void validate() const;
  /// Stable 64-bit digest of the script contents.
  std::uint64_t digest() const;
  /// Entries of one subject, in original order.
  MotionScript only_subject(int subject_id) const;
};

struct CsiStream {
  CsiMatrix samples;  // [T, n_links * n_subcarriers]
  int n_links = 0;
  int n_subcarriers = 0;
  double packet_rate = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t static_seed = 0;
  std::uint64_t script_digest = 0;

  Index n_packets() const { return samples.rows(); }
  Complex at(Index t, int link, int subcarrier) const {
    return samples(t, link * n_subcarriers + subcarrier);
  }
};

/// Per-packet amplitude and sanitized phase, laid out like CsiMatrix.
struct AmpPhase {
  Matrix amp;
  Matrix phase;
  int n_links = 0;
  int n_subcarriers = 0;
};

/// Body-part path gain a(part): upper 1.0, lower 0.7, torso 1.3.
double body_part_gain(BodyPart part);
/// Elevation-dependent visibility of a body part from antenna `antenna` of
/// a receiver with `n_antennas` stacked antennas (index 0 is the top one).
double antenna_visibility(BodyPart part, int antenna, int n_antennas);

/// Raised-cosine radial velocity profile, zero outside [0, duration].
double velocity_profile(const MotionPrimitive& p, double tau);
/// Closed-form integral of velocity_profile from 0 to tau.
double displacement(const MotionPrimitive& p, double tau);

/// Number of packets covering `total_duration`: ceil(duration * rate).
Index packet_count(const ChannelConfig& config, double total_duration);

/// Fixed multipath response, one row of n_links * n_subcarriers gains.
CsiMatrix static_channel(const ChannelConfig& config);
/// Initial phase of a subject's body-part reflector per (link, subcarrier).
Matrix reflector_phase(const ChannelConfig& config, int subject_id, BodyPart part);
/// Sum of moving-reflector components over all script entries.
CsiMatrix dynamic_field(const ChannelConfig& config, const MotionScript& script);
/// Circular complex Gaussian noise for packets [0, n_packets).
CsiMatrix noise_field(const ChannelConfig& config, Index n_packets);

CsiStream simulate_channel(const ChannelConfig& config, const MotionScript& script);

/// Combine streams of separate subjects recorded in the same room. Dynamic
/// parts add; the static channel and the noise of the first stream are kept
/// once.
CsiStream superpose_subjects(const ChannelConfig& config, std::span<const CsiStream> streams);

/// Principal phase in (-pi, pi].
double principal_angle(Complex z);

/// In-place temporal unwrap of each column.
void unwrap_columns(Matrix& phase);
/// Remove the least-squares line across subcarriers of every (packet, link).
void detrend_subcarriers(Matrix& phase, int n_links, int n_subcarriers);

AmpPhase csi_to_amp_phase(const CsiStream& stream);

}  // namespace wisense::synth
