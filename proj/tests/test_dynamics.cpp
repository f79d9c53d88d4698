#include "mavtrack/dynamics.hpp"

#include <cmath>
#include <random>

#include <doctest.h>

#include "mavtrack/target.hpp"

using namespace mavtrack;

namespace {

// Independent matrix exponential: scaling and squaring with a long Taylor
// series. Used as the oracle for the closed-form rotation update.
Mat3 expm_oracle(const Mat3& a) {
  int s = 0;
  double nrm = a.norm();
  while (nrm > 0.25) {
    nrm *= 0.5;
    ++s;
  }
  const Mat3 x = a / std::ldexp(1.0, s);
  Mat3 term = Mat3::Identity();
  Mat3 sum = Mat3::Identity();
  for (int k = 1; k <= 24; ++k) {
    term = (term * x) / static_cast<double>(k);
    sum += term;
  }
  for (int i = 0; i < s; ++i) {
    sum = sum * sum;
  }
  return sum;
}

Vec3 random_vec(Rng& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec3(u(rng), u(rng), u(rng));
}

Mat3 random_rotation(Rng& rng) {
  return expm_oracle(skew(random_vec(rng, 2.0)));
}

SimState random_state(Rng& rng) {
  SimState s;
  s.p = random_vec(rng, 5.0);
  s.v = random_vec(rng, 3.0);
  s.R = random_rotation(rng);
  s.omega_s = random_vec(rng, 2.0);
  s.f = std::uniform_real_distribution<double>(2.0, 18.0)(rng);
  return s;
}

// Right-hand side of the validation-model ODE with thrust and command held
// constant; used by the RK4 oracle below.
struct OdeState {
  Vec3 p, v, omega;
  Mat3 R;
};

OdeState ode_deriv(const OdeState& x, const PhysParams& pp, const Vec3& w_cmd,
                   double f) {
  OdeState d;
  d.p = x.v;
  d.v = x.R.col(2) * (f / pp.mass()) - pp.g;
  d.R = x.R * skew(x.omega);
  d.omega = pp.J.inverse() *
            (pp.k_omega * (w_cmd - x.omega) - x.omega.cross(pp.J * x.omega));
  return d;
}

OdeState ode_axpy(const OdeState& x, double h, const OdeState& d) {
  OdeState y;
  y.p = x.p + h * d.p;
  y.v = x.v + h * d.v;
  y.R = x.R + h * d.R;
  y.omega = x.omega + h * d.omega;
  return y;
}

OdeState rk4_validation(OdeState x, const PhysParams& pp, const Vec3& w_cmd,
                        double f, double t_end, double h) {
  const int n = static_cast<int>(std::llround(t_end / h));
  for (int i = 0; i < n; ++i) {
    const OdeState k1 = ode_deriv(x, pp, w_cmd, f);
    const OdeState k2 = ode_deriv(ode_axpy(x, h / 2, k1), pp, w_cmd, f);
    const OdeState k3 = ode_deriv(ode_axpy(x, h / 2, k2), pp, w_cmd, f);
    const OdeState k4 = ode_deriv(ode_axpy(x, h, k3), pp, w_cmd, f);
    x.p += (h / 6) * (k1.p + 2 * k2.p + 2 * k3.p + k4.p);
    x.v += (h / 6) * (k1.v + 2 * k2.v + 2 * k3.v + k4.v);
    x.R += (h / 6) * (k1.R + 2 * k2.R + 2 * k3.R + k4.R);
    x.omega += (h / 6) * (k1.omega + 2 * k2.omega + 2 * k3.omega + k4.omega);
  }
  return x;
}

}  // namespace

TEST_CASE("skew and vee invert each other") {
  Rng rng(derive_seed(101));
  for (int i = 0; i < 50; ++i) {
    const Vec3 w = random_vec(rng, 10.0);
    const Mat3 s = skew(w);
    CHECK((s + s.transpose()).norm() == 0.0);
    CHECK((vee(s) - w).norm() == 0.0);
    const Vec3 v = random_vec(rng, 10.0);
    CHECK((s * v - w.cross(v)).norm() < 1e-12);
  }
}

TEST_CASE("rotation_exp matches a series matrix exponential") {
  Rng rng(derive_seed(102));
  for (int i = 0; i < 200; ++i) {
    const Vec3 w = random_vec(rng, 8.0);
    const double dt =
        std::uniform_real_distribution<double>(1e-9, 0.2)(rng);
    const Mat3 got = rotation_exp(w, dt);
    const Mat3 want = expm_oracle(skew(w * dt));
    CHECK((got - want).norm() < 1e-12);
  }
}

TEST_CASE("rotation_exp small-angle branch is continuous") {
  const Vec3 w(0.3, -0.4, 0.2);
  // Straddle the series/closed-form switch at |phi|^2 = 1e-12.
  for (double dt : {1.5e-6, 1.9e-6, 2.0e-6, 2.1e-6, 3.0e-6}) {
    const Mat3 got = rotation_exp(w, dt);
    const Mat3 want = expm_oracle(skew(w * dt));
    CHECK((got - want).norm() < 1e-15);
  }
}

TEST_CASE("rotation stays orthonormal over long command sequences") {
  Rng rng(derive_seed(103));
  PhysParams pp;
  DelayBuffer buf(0);
  SimState s;
  s.f = pp.hover_thrust();
  for (int step = 0; step < 100; ++step) {
    Command c;
    c.omega_cmd = random_vec(rng, 4.0);
    c.lambda = std::uniform_real_distribution<double>(-20.0, 20.0)(rng);
    buf.push(c, step * 10);
    s = step_substeps(s, buf, pp, step * 10, 10);
  }
  CHECK((s.R.transpose() * s.R - Mat3::Identity()).norm() < 1e-12);
  CHECK(s.R.determinant() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("training translation matches the ballistic closed form") {
  Rng rng(derive_seed(104));
  PhysParams pp;
  pp.alpha = 1.17;

  SUBCASE("constant attitude, constant thrust") {
    for (int trial = 0; trial < 20; ++trial) {
      SimState s0 = random_state(rng);
      DelayBuffer buf(0);
      buf.push(Command{}, 0);  // zero rates, zero thrust rate
      const int n = 40;
      const SimState s1 = step_substeps(s0, buf, pp, 0, n);
      const double t = n * pp.dt_int;
      const Vec3 a = s0.R.col(2) * (s0.f / pp.mass()) - pp.g;
      CHECK((s1.p - (s0.p + s0.v * t + 0.5 * a * t * t)).norm() < 1e-12);
      CHECK((s1.v - (s0.v + a * t)).norm() < 1e-12);
      CHECK((s1.R - s0.R).norm() == 0.0);
      CHECK(s1.f == s0.f);
    }
  }

  SUBCASE("zero thrust free fall under rotation") {
    SimState s0 = random_state(rng);
    s0.f = 0.0;
    DelayBuffer buf(0);
    Command c;
    c.omega_cmd = Vec3(1.0, -2.0, 0.5);
    buf.push(c, 0);
    const int n = 25;
    const SimState s1 = step_substeps(s0, buf, pp, 0, n);
    const double t = n * pp.dt_int;
    CHECK((s1.p - (s0.p + s0.v * t - 0.5 * pp.g * t * t)).norm() < 1e-12);
    CHECK((s1.v - (s0.v - pp.g * t)).norm() < 1e-12);
  }
}

TEST_CASE("thrust integrates lambda and clips at the limits") {
  PhysParams pp;
  SimState s;
  s.f = pp.hover_thrust();  // 9.8 N at nominal mass
  DelayBuffer buf(0);

  Command up;
  up.lambda = 20.0;
  buf.push(up, 0);
  SimState s1 = step_substeps(s, buf, pp, 0, 3);
  CHECK(s1.f == doctest::Approx(9.8 + 3 * 20.0 * 0.005).epsilon(1e-14));

  // 20 N/s for a full second saturates at f_max = 19.6 N.
  buf.push(up, 3);
  s1 = step_substeps(s1, buf, pp, 3, 200);
  CHECK(s1.f == pp.f_max);

  Command down;
  down.lambda = -20.0;
  buf.push(down, 203);
  s1 = step_substeps(s1, buf, pp, 203, 400);
  CHECK(s1.f == pp.f_min);
}

TEST_CASE("command saturation clips componentwise") {
  CommandBounds b;
  Command c;
  c.omega_cmd = Vec3(5.0, -7.0, 3.9);
  c.lambda = -31.0;
  const Command s = saturate(c, b);
  CHECK(s.omega_cmd.x() == 4.0);
  CHECK(s.omega_cmd.y() == -4.0);
  CHECK(s.omega_cmd.z() == 3.9);
  CHECK(s.lambda == -20.0);
}

TEST_CASE("delay quantizes to integration sub-steps") {
  PhysParams pp;
  CHECK(pp.substeps_per_period() == 10);
  pp.delta = 0.0;
  CHECK(pp.delay_substeps() == 0);
  pp.delta = 0.050;
  CHECK(pp.delay_substeps() == 10);
  pp.delta = 0.0124;
  CHECK(pp.delay_substeps() == 2);
  pp.delta = 0.0126;
  CHECK(pp.delay_substeps() == 3);
}

TEST_CASE("delay buffer holds hover default then activates on time") {
  DelayBuffer buf(3);
  Command c;
  c.omega_cmd = Vec3(0.0, 0.0, 1.0);
  c.lambda = 5.0;
  buf.push(c, 0);
  for (std::int64_t k = 0; k < 3; ++k) {
    const Command& got = buf.fetch(k);
    CHECK(got.omega_cmd.norm() == 0.0);
    CHECK(got.lambda == 0.0);
  }
  const Command& got = buf.fetch(3);
  CHECK(got.lambda == 5.0);
  CHECK((got.omega_cmd - c.omega_cmd).norm() == 0.0);
}

TEST_CASE("delayed channel equals shifted undelayed channel") {
  Rng rng(derive_seed(105));
  PhysParams delayed = PhysParams{};
  delayed.delta = 0.015;  // 3 sub-steps
  PhysParams direct = PhysParams{};

  SimState s0 = random_state(rng);
  std::vector<Command> cmds;
  for (int i = 0; i < 8; ++i) {
    Command c;
    c.omega_cmd = random_vec(rng, 3.0);
    c.lambda = std::uniform_real_distribution<double>(-15.0, 15.0)(rng);
    cmds.push_back(c);
  }

  DelayBuffer buf_a(delayed.delay_substeps());
  DelayBuffer buf_b(0);
  SimState a = s0;
  SimState b = s0;
  for (int step = 0; step < 8; ++step) {
    buf_a.push(cmds[step], step * 10);
    buf_b.push(cmds[step], step * 10 + 3);
    a = step_substeps(a, buf_a, delayed, step * 10, 10);
    b = step_substeps(b, buf_b, direct, step * 10, 10);
  }
  CHECK((a.p - b.p).norm() == 0.0);
  CHECK((a.v - b.v).norm() == 0.0);
  CHECK((a.R - b.R).norm() == 0.0);
  CHECK(a.f == b.f);
}

TEST_CASE("validation rate loop reproduces the scalar exponential response") {
  PhysParams pp;
  const ValidationStepper stepper(pp);
  const double w0 = 2.4;
  const double wc = -1.1;

  SimState s;
  s.f = pp.hover_thrust();
  s.omega_s = Vec3(w0, 0.0, 0.0);  // single axis, so the gyro term vanishes
  DelayBuffer buf(0);
  Command c;
  c.omega_cmd = Vec3(wc, 0.0, 0.0);
  buf.push(c, 0);

  const int n = 37;
  const SimState s1 = stepper.substeps(s, buf, 0, n);
  const double t = n * pp.dt_int;
  const double kappa = pp.k_omega / pp.J(0, 0);
  const double want_w = wc + std::exp(-kappa * t) * (w0 - wc);
  CHECK(s1.omega_s.x() == doctest::Approx(want_w).epsilon(1e-12));
  CHECK(std::abs(s1.omega_s.y()) < 1e-15);
  CHECK(std::abs(s1.omega_s.z()) < 1e-15);

  // Integrated angle about x must equal the exact integral of omega(t).
  const double want_angle = wc * t + (w0 - wc) * (1.0 - std::exp(-kappa * t)) / kappa;
  const Mat3 rel = s.R.transpose() * s1.R;
  const double got_angle = std::atan2(rel(2, 1), rel(1, 1));
  CHECK(got_angle == doctest::Approx(want_angle).epsilon(1e-12));
}

TEST_CASE("validation stepper converges to an RK4 oracle") {
  PhysParams pp;
  SimState s0;
  s0.p = Vec3(0.3, -0.2, 1.0);
  s0.v = Vec3(0.5, 0.1, -0.4);
  s0.R = rotation_exp(Vec3(0.2, -0.3, 0.1), 1.0);
  s0.omega_s = Vec3(1.0, -0.6, 0.8);
  s0.f = 11.0;

  const Vec3 w_cmd(-0.5, 0.9, 0.3);
  OdeState x0;
  x0.p = s0.p;
  x0.v = s0.v;
  x0.R = s0.R;
  x0.omega = s0.omega_s;
  const OdeState ref = rk4_validation(x0, pp, w_cmd, s0.f, pp.t_s, 1e-5);

  auto run = [&](double dt_int) {
    PhysParams p2 = pp;
    p2.dt_int = dt_int;
    const ValidationStepper stepper(p2);
    DelayBuffer buf(0);
    Command c;
    c.omega_cmd = w_cmd;
    buf.push(c, 0);
    return stepper.substeps(s0, buf, 0, p2.substeps_per_period());
  };

  const SimState coarse = run(0.005);
  const SimState fine = run(0.001);
  const double err_coarse = (coarse.omega_s - ref.omega).norm() +
                            (coarse.R - ref.R).norm() +
                            (coarse.p - ref.p).norm();
  const double err_fine = (fine.omega_s - ref.omega).norm() +
                          (fine.R - ref.R).norm() + (fine.p - ref.p).norm();
  CHECK(err_coarse < 1e-3);
  CHECK(err_fine < err_coarse / 3.0);
}

TEST_CASE("validation model approaches the training model for stiff gains") {
  Rng rng(derive_seed(106));
  PhysParams pp;
  pp.k_omega = 1e8;
  const ValidationStepper stepper(pp);

  SimState s0 = random_state(rng);
  Command c;
  c.omega_cmd = Vec3(1.5, -0.7, 2.0);
  c.lambda = 8.0;

  DelayBuffer buf_v(0);
  buf_v.push(c, 0);
  const SimState sv = stepper.step(s0, buf_v, 0);

  DelayBuffer buf_t(0);
  buf_t.push(c, 0);
  const SimState st = step_training_model(s0, buf_t, pp, 0);

  CHECK((sv.p - st.p).norm() < 1e-6);
  CHECK((sv.v - st.v).norm() < 1e-6);
  CHECK((sv.R - st.R).norm() < 1e-6);
  CHECK((sv.omega_s - st.omega_s).norm() < 1e-6);
  CHECK(sv.f == st.f);
}

TEST_CASE("relative rates match a finite-difference oracle") {
  Rng rng(derive_seed(107));
  PhysParams pp;
  pp.alpha = 0.85;

  TrajParams tp;
  tp.kind = TrajKind::kSinusoid;
  tp.origin = Vec3(2.0, -1.0, 4.0);
  tp.amplitude = Vec3(3.0, 10.0, 1.5);
  tp.frequency = Vec3(0.05, 0.15, 0.2);
  tp.phase = Vec3(0.4, 2.8, 5.5);

  for (int trial = 0; trial < 20; ++trial) {
    const SimState s = random_state(rng);
    const double t0 = std::uniform_real_distribution<double>(0.0, 30.0)(rng);
    const TrajSample tgt = eval_trajectory(tp, t0);
    const RelativeRates rr =
        relative_rates(s, pp, tgt.pos, tgt.vel, tgt.acc);

    auto y_of = [&](double h) {
      const Vec3 p = s.p + s.v * h;
      const Mat3 r = s.R * expm_oracle(skew(s.omega_s * h));
      const Vec3 pr = eval_trajectory(tp, t0 + h).pos;
      return Vec3(r.transpose() * (pr - p));
    };
    const double h = 1e-5;
    const Vec3 fd = (y_of(h) - y_of(-h)) / (2.0 * h);
    CHECK((rr.y_dot - fd).norm() < 1e-7);

    // Transport-theorem identity: y_dot + omega x y = -vel_body.
    const Vec3 y = output_y(s, tgt.pos);
    CHECK((rr.y_dot + s.omega_s.cross(y) + rr.vel_body).norm() < 1e-12);

    const Vec3 a = s.R.col(2) * (s.f / pp.mass()) - pp.g;
    CHECK((rr.acc_body - s.R.transpose() * (a - tgt.acc)).norm() < 1e-12);
  }
}

TEST_CASE("physical parameter validation rejects bad setups") {
  PhysParams pp;
  CHECK_NOTHROW(pp.validate());
  pp.alpha = 0.0;
  CHECK_THROWS_AS(pp.validate(), ConfigError);
  pp = PhysParams{};
  pp.dt_int = 0.004;  // 0.05 / 0.004 is not an integer
  CHECK_THROWS_AS(pp.validate(), ConfigError);
  pp = PhysParams{};
  pp.delta = -0.01;
  CHECK_THROWS_AS(pp.validate(), ConfigError);
  pp = PhysParams{};
  pp.f_max = -1.0;
  CHECK_THROWS_AS(pp.validate(), ConfigError);
}

TEST_CASE("hover equilibrium is stationary") {
  PhysParams pp;
  pp.alpha = 1.23;
  SimState s;
  s.p = Vec3(1.0, 2.0, 3.0);
  s.f = pp.hover_thrust();
  DelayBuffer buf(0);
  buf.push(Command{}, 0);
  const SimState s1 = step_substeps(s, buf, pp, 0, 200);
  CHECK((s1.p - s.p).norm() < 1e-12);
  CHECK(s1.v.norm() < 1e-12);
}
