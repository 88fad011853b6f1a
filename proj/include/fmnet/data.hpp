#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmnet/auxnet.hpp"
#include "fmnet/clip.hpp"
#include "fmnet/errors.hpp"
#include "fmnet/io.hpp"
#include "fmnet/tape.hpp"
#include "fmnet/threading.hpp"

namespace fmnet {

// Synthetic lane-following scenario. Curvature is a two-component sinusoid
// in arc length with symmetric priors, so the steering distribution is
// symmetric across a dataset.
struct ScenarioParams {
  std::size_t frame_h = 64;
  std::size_t frame_w = 64;
  std::size_t clip_len = 10;
  double dt = 0.1;            // seconds per frame
  double base_speed = 20.0;   // m/s
  double speed_jitter = 2.0;  // +- uniform, per clip
  double min_speed = 15.0;    // filter floor; generated speeds never go below
  double max_curvature = 0.02;  // 1/m
  double lane_width = 3.5;
  double marking_width = 0.3;
  double dash_period = 4.0;
  double lighting_min = 0.7;
  double lighting_max = 1.0;
  double noise_amp = 0.03;
  double cam_height = 1.5;
  double wheelbase = 2.5;
  double torque_scale = 0.5;
  double view_dist = 80.0;
  double flow_clamp = 8.0;  // px; flow channels are normalized by this
  bool mirror = false;      // negate the curvature profile

  void validate() const {
    if (frame_h < 4 || frame_w < 4) throw ConfigError("scenario: frame dims too small");
    if (clip_len < 1) throw ConfigError("scenario: clip_len must be >= 1");
    if (dt <= 0 || base_speed <= 0 || cam_height <= 0 || wheelbase <= 0)
      throw ConfigError("scenario: dt, base_speed, cam_height, wheelbase must be > 0");
    if (base_speed - speed_jitter < min_speed)
      throw ConfigError("scenario: base_speed - speed_jitter must stay >= min_speed");
    if (max_curvature < 0 || max_curvature * lane_width > 0.5)
      throw ConfigError("scenario: max_curvature out of the supported range");
    if (lane_width <= 0 || marking_width <= 0 || marking_width >= lane_width)
      throw ConfigError("scenario: bad lane/marking widths");
    if (lighting_min > lighting_max || lighting_min < 0 || lighting_max > 1)
      throw ConfigError("scenario: lighting range must satisfy 0 <= min <= max <= 1");
    if (noise_amp < 0 || flow_clamp <= 0 || view_dist <= 1)
      throw ConfigError("scenario: noise_amp/flow_clamp/view_dist out of range");
  }
};

inline void to_json(nlohmann::json& j, const ScenarioParams& p) {
  j = nlohmann::json{{"frame_h", p.frame_h},
                     {"frame_w", p.frame_w},
                     {"clip_len", p.clip_len},
                     {"dt", p.dt},
                     {"base_speed", p.base_speed},
                     {"speed_jitter", p.speed_jitter},
                     {"min_speed", p.min_speed},
                     {"max_curvature", p.max_curvature},
                     {"lane_width", p.lane_width},
                     {"marking_width", p.marking_width},
                     {"dash_period", p.dash_period},
                     {"lighting_min", p.lighting_min},
                     {"lighting_max", p.lighting_max},
                     {"noise_amp", p.noise_amp},
                     {"cam_height", p.cam_height},
                     {"wheelbase", p.wheelbase},
                     {"torque_scale", p.torque_scale},
                     {"view_dist", p.view_dist},
                     {"flow_clamp", p.flow_clamp},
                     {"mirror", p.mirror}};
}

inline void from_json(const nlohmann::json& j, ScenarioParams& p) {
  ScenarioParams d;
  p.frame_h = j.value("frame_h", d.frame_h);
  p.frame_w = j.value("frame_w", d.frame_w);
  p.clip_len = j.value("clip_len", d.clip_len);
  p.dt = j.value("dt", d.dt);
  p.base_speed = j.value("base_speed", d.base_speed);
  p.speed_jitter = j.value("speed_jitter", d.speed_jitter);
  p.min_speed = j.value("min_speed", d.min_speed);
  p.max_curvature = j.value("max_curvature", d.max_curvature);
  p.lane_width = j.value("lane_width", d.lane_width);
  p.marking_width = j.value("marking_width", d.marking_width);
  p.dash_period = j.value("dash_period", d.dash_period);
  p.lighting_min = j.value("lighting_min", d.lighting_min);
  p.lighting_max = j.value("lighting_max", d.lighting_max);
  p.noise_amp = j.value("noise_amp", d.noise_amp);
  p.cam_height = j.value("cam_height", d.cam_height);
  p.wheelbase = j.value("wheelbase", d.wheelbase);
  p.torque_scale = j.value("torque_scale", d.torque_scale);
  p.view_dist = j.value("view_dist", d.view_dist);
  p.flow_clamp = j.value("flow_clamp", d.flow_clamp);
  p.mirror = j.value("mirror", d.mirror);
}

// Procedural road scene for one clip: a camera follows the lane centerline
// of a curvature-defined road. Scene classes: 0 road, 1 marking,
// 2 background (incl. sky). All quantities are deterministic in (seed,
// params); pixel noise is the only stochastic texture and is drawn from a
// per-frame seeded stream.
class ClipGenerator {
 public:
  struct Pose {
    double x = 0, y = 0, psi = 0, s = 0;
  };

  ClipGenerator(std::uint64_t seed, const ScenarioParams& p) : seed_(seed), p_(p) {
    p_.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> amp(0.0, p_.max_curvature / 2.0);
    std::uniform_real_distribution<double> wav(30.0, 80.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
    a1_ = amp(rng);
    a2_ = amp(rng);
    l1_ = wav(rng);
    l2_ = wav(rng);
    ph1_ = phase(rng);
    ph2_ = phase(rng);
    std::uniform_real_distribution<double> sj(-p_.speed_jitter, p_.speed_jitter);
    speed_ = p_.base_speed + sj(rng);
    std::uniform_real_distribution<double> li(p_.lighting_min, p_.lighting_max);
    lighting_ = li(rng);
    build_centerline();
  }

  double curvature(double s) const {
    const double k = a1_ * std::sin(2.0 * M_PI * s / l1_ + ph1_) +
                     a2_ * std::sin(2.0 * M_PI * s / l2_ + ph2_);
    return p_.mirror ? -k : k;
  }

  double speed() const { return speed_; }
  double lighting() const { return lighting_; }

  Pose pose_at_frame(std::size_t t) const { return pose_at(static_cast<double>(t) * speed_ * p_.dt); }

  Pose pose_at(double s) const {
    const double idx = s / kStep;
    const std::size_t i0 = std::min(static_cast<std::size_t>(idx), line_.size() - 2);
    const double f = idx - static_cast<double>(i0);
    Pose out;
    out.x = line_[i0].x + f * (line_[i0 + 1].x - line_[i0].x);
    out.y = line_[i0].y + f * (line_[i0 + 1].y - line_[i0].y);
    out.psi = line_[i0].psi + f * (line_[i0 + 1].psi - line_[i0].psi);
    out.s = s;
    return out;
  }

  // Camera model: pinhole at cam_height, optical axis on the heading,
  // horizon at the image vertical center.
  double focal() const { return 0.5 * static_cast<double>(p_.frame_w); }
  double cx() const { return 0.5 * (static_cast<double>(p_.frame_w) - 1.0); }
  double cy() const { return 0.5 * (static_cast<double>(p_.frame_h) - 1.0); }

  // Ground point of a below-horizon pixel, in world coordinates.
  bool unproject(const Pose& cam, double u, double v, double& wx, double& wy) const {
    if (v <= cy() + 1e-9) return false;
    const double z = focal() * p_.cam_height / (v - cy());
    const double x = (u - cx()) * z / focal();
    const double fx = std::cos(cam.psi), fy = std::sin(cam.psi);
    const double rx = fy, ry = -fx;  // right-hand unit
    wx = cam.x + z * fx + x * rx;
    wy = cam.y + z * fy + x * ry;
    return true;
  }

  bool project(const Pose& cam, double wx, double wy, double& u, double& v) const {
    const double fx = std::cos(cam.psi), fy = std::sin(cam.psi);
    const double rx = fy, ry = -fx;
    const double dx = wx - cam.x, dy = wy - cam.y;
    const double z = dx * fx + dy * fy;
    if (z < 0.2) return false;
    const double x = dx * rx + dy * ry;
    u = cx() + focal() * x / z;
    v = cy() + focal() * p_.cam_height / z;
    return true;
  }

  // Signed lateral distance to the centerline and the arc length of the
  // closest vertex. Positive distance = left of the lane axis.
  void lateral(double wx, double wy, double s_hint, double& d, double& s_near) const {
    const std::size_t lo = static_cast<std::size_t>(
        std::max(0.0, (s_hint - 5.0) / kStep));
    const std::size_t hi = std::min(
        line_.size() - 1,
        static_cast<std::size_t>((s_hint + p_.view_dist + 10.0) / kStep));
    double best = 1e30;
    std::size_t bi = lo;
    for (std::size_t i = lo; i <= hi; ++i) {
      const double dx = wx - line_[i].x, dy = wy - line_[i].y;
      const double q = dx * dx + dy * dy;
      if (q < best) {
        best = q;
        bi = i;
      }
    }
    const double fx = std::cos(line_[bi].psi), fy = std::sin(line_[bi].psi);
    const double dx = wx - line_[bi].x, dy = wy - line_[bi].y;
    d = fx * dy - fy * dx;
    s_near = static_cast<double>(bi) * kStep;
  }

  // 0 road, 1 marking, 2 background
  int classify(double wx, double wy, double s_hint) const {
    double d = 0, s = 0;
    lateral(wx, wy, s_hint, d, s);
    const double half_lane = 0.5 * p_.lane_width;
    const double half_mark = 0.5 * p_.marking_width;
    const bool dash_on = std::fmod(s, p_.dash_period) < 0.5 * p_.dash_period;
    if (std::abs(d) <= half_mark && dash_on) return 1;
    if (std::abs(std::abs(d) - half_lane) <= half_mark) return 1;
    if (std::abs(d) < half_lane) return 0;
    return 2;
  }

  // Scene class seen at pixel (u, v) of frame t; background above horizon
  // and beyond the view distance.
  int class_at_pixel(std::size_t t, double u, double v) const {
    const Pose cam = pose_at_frame(t);
    if (v <= cy() + 1e-9) return 2;
    const double z = focal() * p_.cam_height / (v - cy());
    if (z > p_.view_dist) return 2;
    double wx, wy;
    unproject(cam, u, v, wx, wy);
    return classify(wx, wy, cam.s);
  }

  Tensor<float> render_frame(std::size_t t) const {
    const std::size_t h = p_.frame_h, w = p_.frame_w;
    Tensor<float> img({h, w, 3});
    std::mt19937_64 nrng(seed_ ^ (0x9e3779b97f4a7c15ULL * (t + 1)));
    std::uniform_real_distribution<double> noise(-p_.noise_amp, p_.noise_amp);
    const Pose cam = pose_at_frame(t);
    for (std::size_t py = 0; py < h; ++py) {
      for (std::size_t px = 0; px < w; ++px) {
        const double u = static_cast<double>(px), v = static_cast<double>(py);
        double r, g, b;
        if (v <= cy() + 1e-9) {
          const double f = cy() > 0 ? v / cy() : 0.0;  // darker at the top
          r = 0.35 + 0.25 * f;
          g = 0.55 + 0.2 * f;
          b = 0.85 + 0.1 * f;
        } else {
          const double z = focal() * p_.cam_height / (v - cy());
          int cls = 2;
          if (z <= p_.view_dist) {
            double wx, wy;
            unproject(cam, u, v, wx, wy);
            cls = classify(wx, wy, cam.s);
          }
          switch (cls) {
            case 0: r = 0.25, g = 0.25, b = 0.27; break;
            case 1: r = 0.92, g = 0.92, b = 0.85; break;
            default: r = 0.16, g = 0.45, b = 0.20; break;
          }
        }
        float* px_out = img.ptr() + (py * w + px) * 3;
        const double vals[3] = {r, g, b};
        for (int c = 0; c < 3; ++c) {
          double val = vals[c] * lighting_ + noise(nrng);
          val = std::min(std::max(val * 2.0 - 1.0, -1.0), 1.0);
          px_out[c] = static_cast<float>(val);
        }
      }
    }
    return img;
  }

  // Small-motion ego-flow at pixel (u, v) of the frame pair (t, t+1),
  // linearized at frame t: yaw rate kappa*v plus forward translation.
  void flow_at(std::size_t t, double u, double v, double& du, double& dv) const {
    const Pose cam = pose_at_frame(t);
    const double f = focal();
    const double omega = curvature(cam.s) * speed_;  // rad/s
    const double ux = u - cx(), vy = v - cy();
    double inv_z = 0.0;
    if (vy > 1e-9) {
      const double z = f * p_.cam_height / vy;
      if (z <= p_.view_dist) inv_z = 1.0 / z;
    }
    const double udot = omega * (f + ux * ux / f) + speed_ * ux * inv_z;
    const double vdot = omega * ux * vy / f + speed_ * vy * inv_z;
    du = udot * p_.dt;
    dv = vdot * p_.dt;
  }

  std::vector<VehicleStateSample> states() const {
    std::vector<VehicleStateSample> out(p_.clip_len);
    double prev_angle = 0;
    for (std::size_t t = 0; t < p_.clip_len; ++t) {
      const double s = static_cast<double>(t) * speed_ * p_.dt;
      VehicleStateSample st;
      st.angle = std::atan(p_.wheelbase * curvature(s));
      st.speed = speed_;
      st.torque = t == 0 ? 0.0 : p_.torque_scale * (st.angle - prev_angle) / p_.dt;
      prev_angle = st.angle;
      out[t] = st;
    }
    return out;
  }

  // Auxiliary oracle targets at a path's target dims, sampled at the middle
  // frame. Segmentation: one-hot class maps cycled over channels. Flow:
  // (du, dv) cycled over channels, clamped and normalized by flow_clamp.
  Tensor<float> oracle_target(const MimicPath& path) const {
    const std::size_t th = path.target_h, tw = path.target_w, tc = path.target_c;
    Tensor<float> out({th, tw, tc});
    const std::size_t tm = p_.clip_len / 2;
    const bool seg = path.aux_id == "pspnet";
    if (!seg && path.aux_id != "flownet")
      throw ConfigError("oracle provider: no analytic target for aux network " + path.aux_id);
    const std::size_t tf = (!seg && tm + 1 >= p_.clip_len && p_.clip_len >= 2) ? p_.clip_len - 2 : tm;
    for (std::size_t oy = 0; oy < th; ++oy)
      for (std::size_t ox = 0; ox < tw; ++ox) {
        const double u = (static_cast<double>(ox) + 0.5) * p_.frame_w / tw - 0.5;
        const double v = (static_cast<double>(oy) + 0.5) * p_.frame_h / th - 0.5;
        float* dst = out.ptr() + (oy * tw + ox) * tc;
        if (seg) {
          const int cls = class_at_pixel(tm, u, v);
          for (std::size_t c = 0; c < tc; ++c) dst[c] = (static_cast<int>(c % 3) == cls) ? 1.f : 0.f;
        } else {
          double du = 0, dv = 0;
          if (p_.clip_len >= 2) flow_at(tf, u, v, du, dv);
          const double cu = std::clamp(du / p_.flow_clamp, -1.0, 1.0);
          const double cv = std::clamp(dv / p_.flow_clamp, -1.0, 1.0);
          for (std::size_t c = 0; c < tc; ++c)
            dst[c] = static_cast<float>(c % 2 == 0 ? cu : cv);
        }
      }
    return out;
  }

  Clip generate(const std::vector<MimicPath>& oracle_paths) const {
    Clip clip;
    clip.seed = seed_;
    clip.states = states();
    clip.frames = Tensor<float>({p_.clip_len, p_.frame_h, p_.frame_w, 3});
    const std::size_t frame_n = p_.frame_h * p_.frame_w * 3;
    for (std::size_t t = 0; t < p_.clip_len; ++t) {
      Tensor<float> f = render_frame(t);
      std::copy(f.data.begin(), f.data.end(), clip.frames.data.begin() + t * frame_n);
    }
    for (const auto& path : oracle_paths)
      if (path.aux_id == "pspnet" || path.aux_id == "flownet")
        clip.aux_targets[path.key()] = oracle_target(path);
    return clip;
  }

  const ScenarioParams& params() const { return p_; }

 private:
  static constexpr double kStep = 0.5;  // centerline sampling, meters

  void build_centerline() {
    const double total = static_cast<double>(p_.clip_len) * speed_ * p_.dt + p_.view_dist + 20.0;
    const std::size_t n = static_cast<std::size_t>(total / kStep) + 2;
    line_.resize(n);
    double x = 0, y = 0, psi = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = static_cast<double>(i) * kStep;
      line_[i] = {x, y, psi, s};
      // midpoint integration of heading
      const double k_mid = curvature(s + 0.5 * kStep);
      const double psi_mid = psi + 0.5 * kStep * curvature(s);
      x += kStep * std::cos(psi_mid);
      y += kStep * std::sin(psi_mid);
      psi += kStep * k_mid;
    }
  }

  std::uint64_t seed_;
  ScenarioParams p_;
  double a1_ = 0, a2_ = 0, l1_ = 1, l2_ = 1, ph1_ = 0, ph2_ = 0;
  double speed_ = 0, lighting_ = 1;
  std::vector<Pose> line_;
};

inline Clip generate_clip(std::uint64_t seed, const ScenarioParams& params,
                          const std::vector<MimicPath>& oracle_paths = {}) {
  ClipGenerator gen(seed, params);
  Clip c = gen.generate(oracle_paths);
  c.clip_id = "clip_" + std::to_string(seed);
  return c;
}

// Oracle provider: recomputes analytic targets from the clip's seed.
class OracleProvider : public AuxProvider {
 public:
  explicit OracleProvider(ScenarioParams params) : params_(std::move(params)) {}
  Tensor<float> provide(const Clip& clip, const MimicPath& path) const override {
    return ClipGenerator(clip.seed, params_).oracle_target(path);
  }
  std::string kind() const override { return "oracle"; }

 private:
  ScenarioParams params_;
};

// --- preprocessing ----------------------------------------------------

struct PreprocessOptions {
  std::size_t time_downsample = 2;
  double speed_min = 15.0;  // m/s
  double raw_max = 255.0;   // input pixel range [0, raw_max]
  std::size_t out_h = 64;
  std::size_t out_w = 64;
  std::size_t clip_len = 10;
};

struct PreprocessResult {
  std::vector<Clip> clips;
  std::size_t dropped_frames = 0;   // removed by the speed filter
  std::size_t leftover_frames = 0;  // tail too short to fill a clip
};

inline Tensor<float> resample_image(const Tensor<float>& img, std::size_t th, std::size_t tw,
                                    ResampleMode mode = ResampleMode::Bilinear) {
  Tape<float> tape;
  return tape.val(tape.resample(tape.constant(img), th, tw, mode));
}

// Temporal downsample, speed filter, [-1, 1] normalization, resize, and
// packing into fixed-length clips.
inline PreprocessResult preprocess(const std::vector<Tensor<float>>& frames,
                                   const std::vector<VehicleStateSample>& states,
                                   const PreprocessOptions& opt) {
  if (frames.size() != states.size())
    throw UsageError("preprocess: frame/state count mismatch");
  if (opt.time_downsample < 1 || opt.clip_len < 1 || opt.raw_max <= 0)
    throw ConfigError("preprocess: bad options");
  PreprocessResult res;
  std::vector<Tensor<float>> kept;
  std::vector<VehicleStateSample> kept_states;
  for (std::size_t i = 0; i < frames.size(); i += opt.time_downsample) {
    if (states[i].speed < opt.speed_min) {
      ++res.dropped_frames;
      continue;
    }
    if (frames[i].ndim() != 3 || frames[i].shape[2] != 3)
      throw DataError("preprocess: frame " + std::to_string(i) + " is not HxWx3");
    Tensor<float> f = frames[i];
    for (float& v : f.data)
      v = static_cast<float>(std::clamp(v / opt.raw_max * 2.0 - 1.0, -1.0, 1.0));
    if (f.shape[0] != opt.out_h || f.shape[1] != opt.out_w)
      f = resample_image(f, opt.out_h, opt.out_w);
    kept.push_back(std::move(f));
    kept_states.push_back(states[i]);
  }
  const std::size_t n_clips = kept.size() / opt.clip_len;
  res.leftover_frames = kept.size() - n_clips * opt.clip_len;
  const std::size_t frame_n = opt.out_h * opt.out_w * 3;
  for (std::size_t c = 0; c < n_clips; ++c) {
    Clip clip;
    clip.clip_id = "clip_" + std::to_string(c);
    clip.frames = Tensor<float>({opt.clip_len, opt.out_h, opt.out_w, 3});
    for (std::size_t t = 0; t < opt.clip_len; ++t) {
      const auto& f = kept[c * opt.clip_len + t];
      std::copy(f.data.begin(), f.data.end(), clip.frames.data.begin() + t * frame_n);
      clip.states.push_back(kept_states[c * opt.clip_len + t]);
    }
    res.clips.push_back(std::move(clip));
  }
  return res;
}

// --- dataset on disk ---------------------------------------------------

inline std::string clip_dir_name(std::size_t idx) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%06zu", idx);
  return buf;
}

inline void save_clip(const std::filesystem::path& dir, const Clip& clip) {
  std::filesystem::create_directories(dir);
  write_tensor(dir / "frames", clip.frames);
  Tensor<double> st({clip.states.size(), 3});
  for (std::size_t i = 0; i < clip.states.size(); ++i) {
    st[i * 3 + 0] = clip.states[i].angle;
    st[i * 3 + 1] = clip.states[i].speed;
    st[i * 3 + 2] = clip.states[i].torque;
  }
  write_tensor(dir / "states", st);
  for (const auto& [key, t] : clip.aux_targets) write_tensor(dir / ("aux_" + key), t);
  nlohmann::json m{{"clip_id", clip.clip_id},
                   {"seed", clip.seed},
                   {"dims", clip.frames.shape},
                   {"aux", [&] {
                      std::vector<std::string> keys;
                      for (const auto& [k, t] : clip.aux_targets) keys.push_back(k);
                      return keys;
                    }()}};
  std::ofstream f(dir / "manifest.json");
  f << m.dump(2) << "\n";
}

inline Clip load_clip(const std::filesystem::path& dir) {
  Clip clip;
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw DataError("missing clip manifest: " + (dir / "manifest.json").string());
  nlohmann::json m = nlohmann::json::parse(mf);
  clip.clip_id = m.value("clip_id", dir.filename().string());
  clip.seed = m.value("seed", std::uint64_t(0));
  clip.frames = read_tensor<float>(dir / "frames");
  Tensor<double> st = read_tensor<double>(dir / "states");
  if (st.ndim() != 2 || st.shape[1] != 3)
    throw DataError("states tensor in " + dir.string() + " is not Nx3");
  for (std::size_t i = 0; i < st.shape[0]; ++i)
    clip.states.push_back({st[i * 3 + 0], st[i * 3 + 1], st[i * 3 + 2]});
  if (m.contains("aux"))
    for (const auto& key : m["aux"])
      clip.aux_targets[key.get<std::string>()] =
          read_tensor<float>(dir / ("aux_" + key.get<std::string>()));
  return clip;
}

inline void save_dataset(const std::filesystem::path& dir, const std::vector<Clip>& clips,
                         const ScenarioParams& params) {
  std::filesystem::create_directories(dir / "clips");
  for (std::size_t i = 0; i < clips.size(); ++i)
    save_clip(dir / "clips" / clip_dir_name(i), clips[i]);
  nlohmann::json m{{"clip_count", clips.size()},
                   {"scenario", params},
                   {"units", {{"angle", "rad"}, {"speed", "m/s"}, {"torque", "synthetic (scaled angle rate)"}}}};
  std::ofstream f(dir / "manifest.json");
  f << m.dump(2) << "\n";
}

inline std::vector<Clip> load_dataset(const std::filesystem::path& dir) {
  const auto cdir = dir / "clips";
  if (!std::filesystem::is_directory(cdir))
    throw DataError("not a dataset directory (no clips/): " + dir.string());
  std::vector<std::filesystem::path> entries;
  for (const auto& e : std::filesystem::directory_iterator(cdir))
    if (e.is_directory()) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  std::vector<Clip> clips(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) { clips[i] = load_clip(entries[i]); });
  return clips;
}

inline ScenarioParams load_dataset_params(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw DataError("missing dataset manifest: " + (dir / "manifest.json").string());
  nlohmann::json m = nlohmann::json::parse(f);
  return m.value("scenario", ScenarioParams{});
}

// Generate `count` clips with seeds seed, seed+1, ...
inline std::vector<Clip> generate_dataset(std::uint64_t seed, const ScenarioParams& params,
                                          std::size_t count,
                                          const std::vector<MimicPath>& oracle_paths) {
  std::vector<Clip> clips(count);
  parallel_for(count, [&](std::size_t i) {
    clips[i] = generate_clip(seed + i, params, oracle_paths);
    clips[i].clip_id = clip_dir_name(i);
  });
  return clips;
}

}  // namespace fmnet
