#include "support/properties.hpp"

#include "wisense/channel.hpp"
#include "wisense/stream_io.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace wisense;
using namespace wisense::testing;

TEST_CASE("velocity profile integrates to the closed-form displacement") {
  const synth::MotionPrimitive p{1, "p", synth::BodyPart::upper, 0.9, 0.6, 0.3};
  const int n = 20000;
  double integral = 0.0;
  const double dt = p.duration / n;
  for (int i = 0; i < n; ++i) integral += synth::velocity_profile(p, (i + 0.5) * dt) * dt;
  CHECK(integral == doctest::Approx(synth::displacement(p, p.duration)).epsilon(1e-8));
  CHECK(synth::velocity_profile(p, -0.1) == 0.0);
  CHECK(synth::velocity_profile(p, p.duration + 0.1) == 0.0);
  CHECK(synth::displacement(p, 10.0) == doctest::Approx(synth::displacement(p, p.duration)));
}

TEST_CASE("packet count covers the duration") {
  synth::ChannelConfig c;
  CHECK(synth::packet_count(c, 1.0) == 300);
  CHECK(synth::packet_count(c, 1.001) == 301);
}

TEST_CASE("simulation is bitwise repeatable and seed sensitive") {
  const auto cfg = small_channel();
  const auto script = two_subject_script();
  CHECK(simulation_bitwise_repeatable(cfg, script));
  auto other = cfg;
  other.seed = cfg.seed + 1;
  const auto a = synth::simulate_channel(cfg, script);
  const auto b = synth::simulate_channel(other, script);
  CHECK((a.samples - b.samples).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("subjects superpose linearly without noise") {
  CHECK(superposition_error(small_channel(), two_subject_script()) < 1e-9);
}

TEST_CASE("a motionless room shows only the noise floor") {
  const double ratio = zero_motion_variance_ratio(small_channel(3), 10000);
  CHECK(ratio > 0.8);
  CHECK(ratio < 1.2);
}

TEST_CASE("motion raises amplitude variance above the static case") {
  auto cfg = small_channel();
  const auto moving = synth::csi_to_amp_phase(synth::simulate_channel(cfg, two_subject_script()));
  synth::MotionScript still;
  still.total_duration = 1.0;
  const auto quiet = synth::csi_to_amp_phase(synth::simulate_channel(cfg, still));
  auto var = [](const Matrix& m) {
    return ((m.rowwise() - m.colwise().mean()).array().square().colwise().sum()).mean();
  };
  CHECK(var(moving.amp) > 10.0 * var(quiet.amp));
}

TEST_CASE("phase sanitation") {
  CHECK(synth::principal_angle({-1.0, 0.0}) == doctest::Approx(std::numbers::pi));
  Matrix phase(3, 1);
  phase << 3.0, -3.0, 3.0;
  synth::unwrap_columns(phase);
  CHECK(phase(1, 0) == doctest::Approx(-3.0 + 2 * std::numbers::pi));
  CHECK(phase(2, 0) == doctest::Approx(3.0));

  Matrix line(1, 4);
  line << 0.5, 1.5, 2.5, 3.5;
  synth::detrend_subcarriers(line, 1, 4);
  CHECK(line.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("invalid configs and scripts are rejected") {
  synth::ChannelConfig c;
  c.n_links = 0;
  CHECK_THROWS(c.validate());
  synth::ChannelConfig n;
  n.noise_sigma = -1.0;
  CHECK_THROWS(n.validate());
  auto script = two_subject_script();
  script.entries[0].primitive.duration = 0.0;
  CHECK_THROWS(script.validate());
}

TEST_CASE("CSIS stream round trip") {
  const auto s = synth::simulate_channel(small_channel(), two_subject_script(1.0));
  const auto path = std::filesystem::temp_directory_path() / "wisense_test_stream.csis";
  io::write_csi_stream(path, s);
  const auto r = io::read_csi_stream(path);
  REQUIRE(r.samples.rows() == s.samples.rows());
  REQUIRE(r.samples.cols() == s.samples.cols());
  CHECK(r.n_links == s.n_links);
  CHECK(r.n_subcarriers == s.n_subcarriers);
  CHECK(r.packet_rate == s.packet_rate);
  CHECK(r.seed == s.seed);
  // Stored as f32 pairs.
  for (Index i = 0; i < s.samples.size(); ++i) {
    CHECK(r.samples.data()[i].real() == static_cast<float>(s.samples.data()[i].real()));
    CHECK(r.samples.data()[i].imag() == static_cast<float>(s.samples.data()[i].imag()));
  }
  auto bytes = io::read_file(path);
  CHECK(bytes.compare(0, 4, "CSIS") == 0);
  bytes[0] = 'X';
  io::write_file_atomic(path, bytes);
  CHECK_THROWS(io::read_csi_stream(path));
  io::write_file_atomic(path, io::read_file(path).substr(0, 20));
  CHECK_THROWS(io::read_csi_stream(path));
  std::filesystem::remove(path);
}

TEST_CASE("an empty script without noise is the static channel at every packet") {
  auto cfg = small_channel();
  cfg.noise_sigma = 0.0;
  synth::MotionScript still;
  still.total_duration = 0.2;
  const auto s = synth::simulate_channel(cfg, still);
  const auto h = synth::static_channel(cfg);
  for (Index t = 0; t < s.samples.rows(); ++t) CHECK((s.samples.row(t) - h.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("the moving reflector follows the integrated Doppler phase") {
  auto cfg = small_channel();
  cfg.noise_sigma = 0.0;
  const synth::MotionPrimitive hand{1, "raise-hand", synth::BodyPart::upper, 0.8, 0.5, 0.3};
  synth::MotionScript script;
  script.total_duration = 0.7;
  script.entries = {{hand, 0.1, 0}};
  const auto s = synth::simulate_channel(cfg, script);
  const auto h = synth::static_channel(cfg);
  const Matrix phi0 = synth::reflector_phase(cfg, 0, hand.body_part);
  const double pi = std::numbers::pi;
  double worst = 0.0;
  for (Index t = 0; t < s.samples.rows(); ++t) {
    const double tau = t / cfg.packet_rate - 0.1;
    // Displacement by midpoint quadrature of the raised-cosine velocity.
    double d = 0.0;
    if (tau >= 0.0) {
      const double upto = std::min(tau, hand.duration);
      const int n = 4000;
      for (int k = 0; k < n; ++k) {
        const double u = (k + 0.5) * upto / n;
        d += hand.peak_radial_velocity * 0.5 * (1.0 - std::cos(2 * pi * u / hand.duration)) * upto / n;
      }
    }
    const bool active = tau >= 0.0 && tau <= hand.duration;
    for (int l = 0; l < cfg.n_links; ++l)
      for (int i = 0; i < cfg.n_subcarriers; ++i) {
        const double gain = hand.reflectivity * synth::body_part_gain(hand.body_part) *
                            synth::antenna_visibility(hand.body_part, l % cfg.antennas_per_receiver,
                                                      cfg.antennas_per_receiver);
        const synth::Complex expect =
            active ? std::polar(gain, 4 * pi * d / cfg.carrier_wavelength + phi0(l, i)) : synth::Complex(0.0);
        const Index col = l * cfg.n_subcarriers + i;
        worst = std::max(worst, std::abs(s.samples(t, col) - h(0, col) - expect));
      }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("superposition: identity for one stream and associativity for three") {
  auto cfg = small_channel();
  auto script = two_subject_script();
  const auto one = synth::simulate_channel(cfg, script.only_subject(0));
  const std::vector<synth::CsiStream> single = {one};
  CHECK((synth::superpose_subjects(cfg, single).samples - one.samples).cwiseAbs().maxCoeff() == 0.0);

  cfg.noise_sigma = 0.0;
  script.entries.push_back({{4, "step", synth::BodyPart::lower, 0.4, 0.3, 0.2}, 0.5, 2});
  std::vector<synth::CsiStream> s;
  for (int k = 0; k < 3; ++k) s.push_back(synth::simulate_channel(cfg, script.only_subject(k)));
  const std::vector<synth::CsiStream> ab = {s[0], s[1]}, bc = {s[1], s[2]};
  const std::vector<synth::CsiStream> left = {synth::superpose_subjects(cfg, ab), s[2]};
  const std::vector<synth::CsiStream> right = {s[0], synth::superpose_subjects(cfg, bc)};
  const auto l = synth::superpose_subjects(cfg, left).samples, r = synth::superpose_subjects(cfg, right).samples;
  CHECK((l - r).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((l - synth::simulate_channel(cfg, script).samples).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("amplitude and phase of constant channels") {
  synth::CsiStream s;
  s.n_links = 2;
  s.n_subcarriers = 4;
  s.samples = synth::CsiMatrix::Constant(3, 8, {1.0, 0.0});
  auto ap = synth::csi_to_amp_phase(s);
  CHECK((ap.amp.array() - 1.0).abs().maxCoeff() == 0.0);
  CHECK(ap.phase.cwiseAbs().maxCoeff() == 0.0);
  s.samples = synth::CsiMatrix::Constant(3, 8, {0.0, 1.0});
  ap = synth::csi_to_amp_phase(s);
  CHECK((ap.amp.array() - 1.0).abs().maxCoeff() < 1e-15);
  CHECK(ap.phase.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("an injected linear phase slope is removed") {
  const auto base = synth::simulate_channel(small_channel(), two_subject_script());
  auto sloped = base;
  for (Index t = 0; t < sloped.samples.rows(); ++t)
    for (int l = 0; l < sloped.n_links; ++l)
      for (int i = 0; i < sloped.n_subcarriers; ++i)
        sloped.samples(t, l * sloped.n_subcarriers + i) *= std::polar(1.0, 0.3 + 0.05 * i);
  const auto a = synth::csi_to_amp_phase(base), b = synth::csi_to_amp_phase(sloped);
  CHECK((a.phase - b.phase).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((a.amp - b.amp).cwiseAbs().maxCoeff() < 1e-12);
}
