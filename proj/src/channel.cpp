#include "wisense/channel.hpp"

#include "wisense/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <random>

namespace wisense::synth {

namespace {

constexpr std::uint64_t kStaticTag = 0x5354415449430000ull;
constexpr std::uint64_t kReflectorTag = 0x5245464c00000000ull;
constexpr std::uint64_t kNoiseTag = 0x4e4f495345000000ull;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool finite_positive(double x) { return std::isfinite(x) && x > 0.0; }

// Piecewise-linear profile through (0, top), (0.5, mid), (1, bottom).
double elevation_profile(double x, double top, double mid, double bottom) {
  if (x <= 0.5) return top + (mid - top) * (x / 0.5);
  return mid + (bottom - mid) * ((x - 0.5) / 0.5);
}

void mix(std::uint64_t& h, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) {
    h ^= (v >> (8 * b)) & 0xffu;
    h *= 1099511628211ull;
  }
}

}  // namespace

std::string to_string(BodyPart part) {
  switch (part) {
    case BodyPart::upper: return "upper";
    case BodyPart::lower: return "lower";
    case BodyPart::torso: return "torso";
  }
  return "upper";
}

BodyPart body_part_from_string(const std::string& name) {
  if (name == "upper") return BodyPart::upper;
  if (name == "lower") return BodyPart::lower;
  if (name == "torso") return BodyPart::torso;
  throw std::invalid_argument("unknown body part '" + name + "'");
}

void ChannelConfig::validate() const {
  if (n_links < 1) throw std::invalid_argument("n_links must be >= 1");
  if (n_subcarriers < 1) throw std::invalid_argument("n_subcarriers must be >= 1");
  if (!finite_positive(packet_rate)) throw std::invalid_argument("packet_rate must be finite and > 0");
  if (!finite_positive(carrier_wavelength))
    throw std::invalid_argument("carrier_wavelength must be finite and > 0");
  if (!std::isfinite(noise_sigma) || noise_sigma < 0.0)
    throw std::invalid_argument("noise_sigma must be finite and >= 0");
  if (n_static_paths < 0) throw std::invalid_argument("n_static_paths must be >= 0");
  if (!std::isfinite(subcarrier_spacing) || subcarrier_spacing < 0.0)
    throw std::invalid_argument("subcarrier_spacing must be finite and >= 0");
  if (antennas_per_receiver < 1) throw std::invalid_argument("antennas_per_receiver must be >= 1");
}

void MotionPrimitive::validate() const {
  if (!finite_positive(duration)) throw std::invalid_argument("primitive '" + name + "': duration must be > 0");
  if (!std::isfinite(peak_radial_velocity))
    throw std::invalid_argument("primitive '" + name + "': peak velocity must be finite");
  if (!finite_positive(reflectivity))
    throw std::invalid_argument("primitive '" + name + "': reflectivity must be > 0");
}

void MotionScript::validate() const {
  if (!finite_positive(total_duration)) throw std::invalid_argument("script total_duration must be > 0");
  constexpr double slack = 1e-9;
  for (const auto& e : entries) {
    e.primitive.validate();
    if (!std::isfinite(e.start_time) || e.start_time < -slack ||
        e.start_time + e.primitive.duration > total_duration + slack) {
      throw std::invalid_argument("script entry '" + e.primitive.name + "' does not fit in [0, total_duration]");
    }
  }
}

std::uint64_t MotionScript::digest() const {
  std::uint64_t h = 1469598103934665603ull;
  mix(h, std::bit_cast<std::uint64_t>(total_duration));
  for (const auto& e : entries) {
    mix(h, static_cast<std::uint64_t>(e.primitive.id));
    mix(h, fnv1a(e.primitive.name));
    mix(h, static_cast<std::uint64_t>(e.primitive.body_part));
    mix(h, std::bit_cast<std::uint64_t>(e.primitive.peak_radial_velocity));
    mix(h, std::bit_cast<std::uint64_t>(e.primitive.duration));
    mix(h, std::bit_cast<std::uint64_t>(e.primitive.reflectivity));
    mix(h, std::bit_cast<std::uint64_t>(e.start_time));
    mix(h, static_cast<std::uint64_t>(e.subject_id));
  }
  return h;
}

MotionScript MotionScript::only_subject(int subject_id) const {
  MotionScript out;
  out.total_duration = total_duration;
  for (const auto& e : entries)
    if (e.subject_id == subject_id) out.entries.push_back(e);
  return out;
}

double body_part_gain(BodyPart part) {
  switch (part) {
    case BodyPart::upper: return 1.0;
    case BodyPart::lower: return 0.7;
    case BodyPart::torso: return 1.3;
  }
  return 1.0;
}

double antenna_visibility(BodyPart part, int antenna, int n_antennas) {
  const double x = n_antennas > 1 ? static_cast<double>(antenna) / (n_antennas - 1) : 0.5;
  switch (part) {
    case BodyPart::upper: return elevation_profile(x, 1.0, 0.5, 0.15);
    case BodyPart::lower: return elevation_profile(x, 0.15, 0.5, 1.0);
    case BodyPart::torso: return elevation_profile(x, 0.6, 1.0, 0.6);
  }
  return 1.0;
}

double velocity_profile(const MotionPrimitive& p, double tau) {
  if (tau < 0.0 || tau > p.duration) return 0.0;
  return p.peak_radial_velocity * 0.5 * (1.0 - std::cos(kTwoPi * tau / p.duration));
}

double displacement(const MotionPrimitive& p, double tau) {
  tau = std::clamp(tau, 0.0, p.duration);
  return p.peak_radial_velocity * 0.5 * (tau - p.duration / kTwoPi * std::sin(kTwoPi * tau / p.duration));
}

Index packet_count(const ChannelConfig& config, double total_duration) {
  const double x = total_duration * config.packet_rate;
  return static_cast<Index>(std::ceil(x - 1e-9 * std::max(1.0, x)));
}

CsiMatrix static_channel(const ChannelConfig& config) {
  auto rng = make_rng({config.static_seed, kStaticTag});
  const double comp_std = config.n_static_paths > 0 ? std::sqrt(0.5 / config.n_static_paths) : 0.0;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> delay(0.0, 200e-9);

  CsiMatrix h = CsiMatrix::Zero(1, config.columns());
  for (int p = 0; p < config.n_static_paths; ++p) {
    std::vector<Complex> gains(config.n_links);
    for (auto& g : gains) {
      const double re = gauss(rng), im = gauss(rng);
      g = Complex(re, im) * comp_std;
    }
    const double tau = delay(rng);
    for (int l = 0; l < config.n_links; ++l)
      for (int i = 0; i < config.n_subcarriers; ++i)
        h(0, l * config.n_subcarriers + i) +=
            gains[l] * std::polar(1.0, -kTwoPi * config.subcarrier_spacing * i * tau);
  }
  return h;
}

Matrix reflector_phase(const ChannelConfig& config, int subject_id, BodyPart part) {
  auto rng = make_rng({config.static_seed, kReflectorTag, static_cast<std::uint64_t>(subject_id),
                       static_cast<std::uint64_t>(part)});
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);
  std::uniform_real_distribution<double> delay(0.0, 100e-9);
  Matrix phase(config.n_links, config.n_subcarriers);
  for (int l = 0; l < config.n_links; ++l) {
    const double theta = angle(rng);
    const double tau = delay(rng);
    for (int i = 0; i < config.n_subcarriers; ++i)
      phase(l, i) = theta - kTwoPi * config.subcarrier_spacing * i * tau;
  }
  return phase;
}

CsiMatrix dynamic_field(const ChannelConfig& config, const MotionScript& script) {
  const Index T = packet_count(config, script.total_duration);
  CsiMatrix field = CsiMatrix::Zero(T, config.columns());
  for (const auto& e : script.entries) {
    const auto& p = e.primitive;
    const Matrix phi0 = reflector_phase(config, e.subject_id, p.body_part);
    const double base_gain = p.reflectivity * body_part_gain(p.body_part);
    std::vector<double> link_gain(config.n_links);
    for (int l = 0; l < config.n_links; ++l)
      link_gain[l] = base_gain * antenna_visibility(p.body_part, l % config.antennas_per_receiver,
                                                    config.antennas_per_receiver);
    const Index first = std::max<Index>(0, static_cast<Index>(std::floor(e.start_time * config.packet_rate)));
    const Index last = std::min<Index>(T - 1, static_cast<Index>(std::ceil((e.start_time + p.duration) * config.packet_rate)));
    for (Index t = first; t <= last; ++t) {
      const double tau = static_cast<double>(t) / config.packet_rate - e.start_time;
      if (tau < 0.0 || tau > p.duration) continue;
      const double doppler_phase = kTwoPi * 2.0 * displacement(p, tau) / config.carrier_wavelength;
      for (int l = 0; l < config.n_links; ++l)
        for (int i = 0; i < config.n_subcarriers; ++i)
          field(t, l * config.n_subcarriers + i) += std::polar(link_gain[l], doppler_phase + phi0(l, i));
    }
  }
  return field;
}

CsiMatrix noise_field(const ChannelConfig& config, Index n_packets) {
  CsiMatrix noise = CsiMatrix::Zero(n_packets, config.columns());
  if (config.noise_sigma == 0.0) return noise;
  std::normal_distribution<double> gauss(0.0, config.noise_sigma);
  for (Index t = 0; t < n_packets; ++t) {
    auto rng = make_rng({config.seed, kNoiseTag, static_cast<std::uint64_t>(t)});
    for (Index c = 0; c < noise.cols(); ++c) {
      const double re = gauss(rng), im = gauss(rng);
      noise(t, c) = Complex(re, im);
    }
  }
  return noise;
}

CsiStream simulate_channel(const ChannelConfig& config, const MotionScript& script) {
  config.validate();
  script.validate();
  CsiStream out;
  out.n_links = config.n_links;
  out.n_subcarriers = config.n_subcarriers;
  out.packet_rate = config.packet_rate;
  out.seed = config.seed;
  out.static_seed = config.static_seed;
  out.script_digest = script.digest();

  out.samples = dynamic_field(config, script);
  const CsiMatrix h_static = static_channel(config);
  out.samples.rowwise() += h_static.row(0);
  out.samples += noise_field(config, out.samples.rows());
  return out;
}

CsiStream superpose_subjects(const ChannelConfig& config, std::span<const CsiStream> streams) {
  config.validate();
  if (streams.empty()) throw std::invalid_argument("superpose_subjects: no streams");
  const auto& first = streams.front();
  for (const auto& s : streams) {
    require_shape(s.n_links == config.n_links && s.n_subcarriers == config.n_subcarriers &&
                      s.samples.cols() == config.columns(),
                  "superpose_subjects: stream layout does not match config");
    require_shape(s.samples.rows() == first.samples.rows(), "superpose_subjects: packet counts differ");
    if (s.packet_rate != config.packet_rate || s.static_seed != config.static_seed)
      throw std::invalid_argument("superpose_subjects: streams were recorded with a different config");
  }
  if (streams.size() == 1) return first;

  const Index T = first.samples.rows();
  const CsiMatrix h_static = static_channel(config);
  CsiMatrix total = CsiMatrix::Zero(T, config.columns());
  for (const auto& s : streams) {
    ChannelConfig own = config;
    own.seed = s.seed;
    CsiMatrix dyn = s.samples - noise_field(own, T);
    dyn.rowwise() -= h_static.row(0);
    total += dyn;
  }
  ChannelConfig keep = config;
  keep.seed = first.seed;
  total.rowwise() += h_static.row(0);
  total += noise_field(keep, T);

  CsiStream out = first;
  out.samples = std::move(total);
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& s : streams) mix(h, s.script_digest);
  out.script_digest = h;
  return out;
}

double principal_angle(Complex z) {
  const double a = std::arg(z);
  return a <= -std::numbers::pi ? std::numbers::pi : a;
}

void unwrap_columns(Matrix& phase) {
  for (Index c = 0; c < phase.cols(); ++c) {
    double correction = 0.0;
    double prev = phase(0, c);
    for (Index t = 1; t < phase.rows(); ++t) {
      const double raw = phase(t, c);
      const double d = raw - prev;
      double wrapped = std::remainder(d, kTwoPi);  // in [-pi, pi]
      if (wrapped == -std::numbers::pi && d > 0) wrapped = std::numbers::pi;
      if (std::abs(d) >= std::numbers::pi) correction += wrapped - d;
      prev = raw;
      phase(t, c) = raw + correction;
    }
  }
}

void detrend_subcarriers(Matrix& phase, int n_links, int n_subcarriers) {
  require_shape(phase.cols() == static_cast<Index>(n_links) * n_subcarriers,
                "detrend_subcarriers: column count mismatch");
  const double k_mean = 0.5 * (n_subcarriers - 1);
  double k_var = 0.0;
  for (int i = 0; i < n_subcarriers; ++i) k_var += (i - k_mean) * (i - k_mean);
  for (Index t = 0; t < phase.rows(); ++t) {
    for (int l = 0; l < n_links; ++l) {
      auto seg = phase.row(t).segment(static_cast<Index>(l) * n_subcarriers, n_subcarriers);
      const double mean = seg.mean();
      double cov = 0.0;
      for (int i = 0; i < n_subcarriers; ++i) cov += (i - k_mean) * (seg(i) - mean);
      const double slope = k_var > 0.0 ? cov / k_var : 0.0;
      for (int i = 0; i < n_subcarriers; ++i) seg(i) -= mean + slope * (i - k_mean);
    }
  }
}

AmpPhase csi_to_amp_phase(const CsiStream& stream) {
  AmpPhase out;
  out.n_links = stream.n_links;
  out.n_subcarriers = stream.n_subcarriers;
  out.amp = stream.samples.cwiseAbs();
  out.phase = stream.samples.unaryExpr([](const Complex& z) { return principal_angle(z); });
  unwrap_columns(out.phase);
  detrend_subcarriers(out.phase, stream.n_links, stream.n_subcarriers);
  return out;
}

}  // namespace wisense::synth
