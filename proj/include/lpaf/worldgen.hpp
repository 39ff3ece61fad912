#pragma once

// Synthetic multiview reaching world. Three colored discs, a fixed gray
// anchor square and a white gripper live in [-1, 1]^2; an orthographic
// camera looks at the scene rotated by theta about the origin. Actions are
// world-frame displacements, so the camera angle is the only thing that
// changes between views.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "lpaf/error.hpp"
#include "lpaf/rng.hpp"

namespace lpaf {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  double norm() const { return std::hypot(x, y); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y); }

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

using Rgb = std::array<float, 3>;

namespace world {
inline constexpr double kBound = 0.8;
inline constexpr double kMinRadius = 0.06;
inline constexpr double kMaxRadius = 0.12;
inline constexpr double kMinGap = 0.05;
inline constexpr double kGripperRadius = 0.05;
inline constexpr double kSuccessRadius = 0.05;
inline constexpr double kMaxStep = 0.1;
inline constexpr int kTaskCount = 3;
inline constexpr int kDefaultHorizon = 50;
inline constexpr int kMaxSampleAttempts = 1000;

inline constexpr float kBackground = 0.1f;
inline constexpr Rgb kPalette[kTaskCount] = {Rgb{1.f, 0.f, 0.f}, Rgb{0.f, 1.f, 0.f}, Rgb{0.f, 0.f, 1.f}};
inline constexpr Rgb kAnchorColor = {0.5f, 0.5f, 0.5f};
inline constexpr Rgb kGripperColor = {1.f, 1.f, 1.f};

// The anchor sits at radius 0.9 so it stays inside the frame for every view
// angle; see README ("Anchor placement").
inline constexpr Vec2 kAnchorCenter = {0.0, 0.9};
inline constexpr double kAnchorSide = 0.12;
} // namespace world

struct Disc {
  Vec2 center;
  double radius = 0.0;
  Rgb color{};

  friend bool operator==(const Disc&, const Disc&) = default;
};

struct Anchor {
  Vec2 center = world::kAnchorCenter;
  double side = world::kAnchorSide;
  double angle_deg = 0.0; // orientation of the square's edges

  friend bool operator==(const Anchor&, const Anchor&) = default;
};

struct Scene {
  std::vector<Disc> objects; // objects[k] has palette color k
  Anchor anchor;
  Vec2 gripper_start;
  int task_id = 0;
  std::uint64_t seed = 0;

  const Disc& target() const {
    require(task_id >= 0 && static_cast<std::size_t>(task_id) < objects.size(), ErrorKind::TaskOutOfRange,
            "task_id out of range");
    return objects[static_cast<std::size_t>(task_id)];
  }

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct ViewSpec {
  double theta_deg = 0.0;

  static ViewSpec at(double theta_deg) {
    require(theta_deg >= -180.0 && theta_deg < 180.0, ErrorKind::InvalidArgument,
            "view angle must lie in [-180, 180): " + std::to_string(theta_deg));
    return ViewSpec{theta_deg};
  }
  static ViewSpec reference() { return ViewSpec{0.0}; }

  bool is_reference() const { return theta_deg == 0.0; }

  friend bool operator==(const ViewSpec&, const ViewSpec&) = default;
};

struct Image {
  static constexpr int kWidth = 32;
  static constexpr int kHeight = 32;
  static constexpr int kChannels = 3;
  static constexpr std::size_t kSize = kWidth * kHeight * kChannels;

  std::vector<float> data = std::vector<float>(kSize, world::kBackground); // HWC, row 0 at the top

  float& at(int row, int col, int ch) { return data[(static_cast<std::size_t>(row) * kWidth + col) * kChannels + ch]; }
  float at(int row, int col, int ch) const {
    return data[(static_cast<std::size_t>(row) * kWidth + col) * kChannels + ch];
  }
  void paint(int row, int col, const Rgb& c) {
    for (int ch = 0; ch < kChannels; ++ch) at(row, col, ch) = c[static_cast<std::size_t>(ch)];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

struct Step {
  Image image;
  Vec2 gripper;
  Vec2 action;
};

struct Trajectory {
  Scene scene;
  int task_id = 0;
  ViewSpec view;
  std::vector<Step> steps;
  bool success = false;
};

inline bool reached(const Scene& scene, Vec2 gripper) {
  return (gripper - scene.target().center).norm() < world::kSuccessRadius;
}

inline double clip_action(double v) { return std::clamp(v, -world::kMaxStep, world::kMaxStep); }
inline Vec2 clip_action(Vec2 a) { return {clip_action(a.x), clip_action(a.y)}; }

// ---------------------------------------------------------------------------
// Scene sampling

inline Scene sample_scene(int task_id, std::uint64_t seed) {
  require(task_id >= 0 && task_id < world::kTaskCount, ErrorKind::TaskOutOfRange, "task_id out of range");
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(task_id), 0x5CE4E}));
  Scene s;
  s.task_id = task_id;
  s.seed = seed;
  int attempts = 0;
  for (int k = 0; k < world::kTaskCount; ++k) {
    for (;;) {
      if (++attempts > world::kMaxSampleAttempts) throw Error(ErrorKind::SceneInfeasible, "scene infeasible");
      Disc d;
      d.center = {uniform(rng, -world::kBound, world::kBound), uniform(rng, -world::kBound, world::kBound)};
      d.radius = uniform(rng, world::kMinRadius, world::kMaxRadius);
      d.color = world::kPalette[k];
      bool clear = true;
      for (const auto& o : s.objects)
        if ((o.center - d.center).norm() < o.radius + d.radius + world::kMinGap) clear = false;
      if (clear) {
        s.objects.push_back(d);
        break;
      }
    }
  }
  s.gripper_start = {uniform(rng, -world::kBound, world::kBound), uniform(rng, -world::kBound, world::kBound)};
  return s;
}

// ---------------------------------------------------------------------------
// Rendering

inline Vec2 rotate(Vec2 p, double theta_deg) {
  const double t = theta_deg * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  return {c * p.x - s * p.y, s * p.x + c * p.y};
}

/// Rotates every entity of the scene by theta about the origin.
inline Scene rotate_world(const Scene& scene, double theta_deg) {
  Scene out = scene;
  for (auto& d : out.objects) d.center = rotate(d.center, theta_deg);
  out.anchor.center = rotate(scene.anchor.center, theta_deg);
  out.anchor.angle_deg = scene.anchor.angle_deg + theta_deg;
  out.gripper_start = rotate(scene.gripper_start, theta_deg);
  return out;
}

/// World coordinate -> pixel index; may fall outside [0, 31].
inline std::pair<int, int> to_pixel(Vec2 view_point) {
  const int col = static_cast<int>(std::lround((view_point.x + 1.0) / 2.0 * (Image::kWidth - 1)));
  const int row = static_cast<int>(std::lround((1.0 - view_point.y) / 2.0 * (Image::kHeight - 1)));
  return {row, col};
}

/// Center of pixel (row, col) in view coordinates; inverse of to_pixel on
/// the lattice.
inline Vec2 pixel_center(int row, int col) {
  return {2.0 * col / (Image::kWidth - 1) - 1.0, 1.0 - 2.0 * row / (Image::kHeight - 1)};
}

namespace detail {

inline void paint_disc(Image& img, Vec2 c, double r, const Rgb& color) {
  for (int row = 0; row < Image::kHeight; ++row)
    for (int col = 0; col < Image::kWidth; ++col) {
      const Vec2 d = pixel_center(row, col) - c;
      if (d.x * d.x + d.y * d.y <= r * r) img.paint(row, col, color);
    }
}

inline void paint_square(Image& img, const Anchor& a, const Rgb& color) {
  const double half = a.side / 2.0;
  for (int row = 0; row < Image::kHeight; ++row)
    for (int col = 0; col < Image::kWidth; ++col) {
      const Vec2 local = rotate(pixel_center(row, col) - a.center, -a.angle_deg);
      if (std::abs(local.x) <= half && std::abs(local.y) <= half) img.paint(row, col, color);
    }
}

} // namespace detail

/// Rasterizes a scene whose entities are already in view coordinates.
/// Draw order: anchor, objects, gripper; later entities overwrite.
inline Image rasterize(const Scene& view_scene, Vec2 view_gripper) {
  Image img;
  detail::paint_square(img, view_scene.anchor, world::kAnchorColor);
  for (const auto& d : view_scene.objects) detail::paint_disc(img, d.center, d.radius, d.color);
  detail::paint_disc(img, view_gripper, world::kGripperRadius, world::kGripperColor);
  return img;
}

inline Image render(const Scene& scene, Vec2 gripper, const ViewSpec& view) {
  return rasterize(rotate_world(scene, view.theta_deg), rotate(gripper, view.theta_deg));
}

// ---------------------------------------------------------------------------
// Expert and rollouts

/// World-frame displacement toward the target, clamped per component.
inline Vec2 expert_action(const Scene& scene, Vec2 gripper) {
  return clip_action(scene.target().center - gripper);
}

inline Trajectory generate_trajectory(const Scene& scene, const ViewSpec& view,
                                      int horizon = world::kDefaultHorizon) {
  require(horizon >= 1, ErrorKind::InvalidArgument, "horizon must be >= 1");
  Trajectory tr{scene, scene.task_id, view, {}, false};
  Vec2 g = scene.gripper_start;
  for (int t = 0; t < horizon && !reached(scene, g); ++t) {
    Step st{render(scene, g, view), g, expert_action(scene, g)};
    g = g + st.action;
    tr.steps.push_back(std::move(st));
  }
  tr.success = reached(scene, g);
  if (!tr.success) throw Error(ErrorKind::ExpertFailure, "expert failure");
  return tr;
}

using Controller = std::function<Vec2(const Image&, int task_id)>;

struct RolloutResult {
  bool success = false;
  int steps_taken = 0;
  Vec2 final_gripper;
};

inline RolloutResult simulate_rollout(const Controller& controller, const Scene& scene, const ViewSpec& view,
                                      int horizon = world::kDefaultHorizon) {
  require(horizon >= 1, ErrorKind::InvalidArgument, "horizon must be >= 1");
  RolloutResult r;
  Vec2 g = scene.gripper_start;
  while (r.steps_taken < horizon && !reached(scene, g)) {
    const Vec2 a = controller(render(scene, g, view), scene.task_id);
    if (!a.finite()) throw Error(ErrorKind::ControllerFault, "controller fault: non-finite action");
    g = g + clip_action(a);
    ++r.steps_taken;
  }
  r.success = reached(scene, g);
  r.final_gripper = g;
  return r;
}

/// The scripted expert as an image-driven controller: it tracks the true
/// gripper by replaying the same clipped actions the rollout applies.
inline Controller make_expert_controller(const Scene& scene) {
  return [scene, g = scene.gripper_start](const Image&, int) mutable {
    const Vec2 a = expert_action(scene, g);
    g = g + clip_action(a);
    return a;
  };
}

// ---------------------------------------------------------------------------
// Datasets

struct DatasetProtocol {
  double a_deg = 45.0;
  int v = 4;
  int s = world::kTaskCount;
  int j = 28;
  std::uint64_t seed = 0;
  int horizon = world::kDefaultHorizon;

  void validate() const {
    require(a_deg > 0.0, ErrorKind::InvalidArgument, "protocol: a_deg must be positive");
    require(v >= 0 && v % 2 == 0, ErrorKind::InvalidArgument, "protocol: v must be even and non-negative");
    require(s >= 1 && s <= world::kTaskCount, ErrorKind::InvalidArgument, "protocol: s must be in [1, 3]");
    require(j >= 0, ErrorKind::InvalidArgument, "protocol: j must be non-negative");
    require(horizon >= 1, ErrorKind::InvalidArgument, "protocol: horizon must be >= 1");
    require(a_deg * (v / 2) < 180.0, ErrorKind::InvalidArgument, "protocol: auxiliary views exceed 180 degrees");
  }

  /// Auxiliary angles, ascending: -(v/2)a, ..., -a, a, ..., (v/2)a.
  std::vector<double> auxiliary_views() const {
    std::vector<double> out;
    for (int k = v / 2; k >= 1; --k) out.push_back(-k * a_deg);
    for (int k = 1; k <= v / 2; ++k) out.push_back(k * a_deg);
    return out;
  }

  std::size_t total_trajectories() const { return static_cast<std::size_t>((v + 1) * s * j); }
};

struct PairedState {
  Scene scene;
  Vec2 gripper;
  Image reference;
  Image auxiliary;
  double theta_deg = 0.0;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  std::vector<PairedState> paired_states;

  std::size_t step_count() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.steps.size();
    return n;
  }
};

inline std::uint64_t trajectory_seed(std::uint64_t protocol_seed, int task, double theta_deg, int index) {
  return derive_seed({protocol_seed, static_cast<std::uint64_t>(task), angle_key(theta_deg),
                      static_cast<std::uint64_t>(index)});
}

/// Expert trajectories for `count` scenes per task at one view, optionally
/// pairing every visited state with its reference-view render.
inline void collect_view(Dataset& out, double theta_deg, int tasks, int count, std::uint64_t seed, int horizon,
                         bool with_pairs) {
  const ViewSpec view = ViewSpec::at(theta_deg);
  for (int task = 0; task < tasks; ++task)
    for (int idx = 0; idx < count; ++idx) {
      Scene scene = sample_scene(task, trajectory_seed(seed, task, theta_deg, idx));
      Trajectory tr = generate_trajectory(scene, view, horizon);
      if (with_pairs)
        for (const auto& st : tr.steps)
          out.paired_states.push_back(
              {scene, st.gripper, render(scene, st.gripper, ViewSpec::reference()), st.image, theta_deg});
      out.trajectories.push_back(std::move(tr));
    }
}

/// D_R (reference view, s*j trajectories) and D_M (v*s*j auxiliary-view
/// trajectories with paired reference renders).
inline std::pair<Dataset, Dataset> build_datasets(const DatasetProtocol& p) {
  p.validate();
  Dataset ref, multi;
  collect_view(ref, 0.0, p.s, p.j, p.seed, p.horizon, false);
  for (double theta : p.auxiliary_views()) collect_view(multi, theta, p.s, p.j, p.seed, p.horizon, true);
  return {std::move(ref), std::move(multi)};
}

/// Equal-budget reference-only set: (v+1)*s*j trajectories, all at 0 deg.
/// The first j scenes per task coincide with D_R.
inline Dataset build_reference_large(const DatasetProtocol& p) {
  p.validate();
  Dataset out;
  collect_view(out, 0.0, p.s, (p.v + 1) * p.j, p.seed, p.horizon, false);
  return out;
}

inline constexpr std::uint64_t kHeldOutSalt = 0x4E1D0u;

/// Paired states on fresh scenes for diagnostics. Seeds are salted so they
/// never overlap the training protocol.
inline Dataset build_paired_holdout(const std::vector<double>& views, int tasks, int per_task, std::uint64_t seed,
                                    int horizon = world::kDefaultHorizon) {
  Dataset out;
  for (double theta : views) collect_view(out, theta, tasks, per_task, derive_seed({seed, kHeldOutSalt}), horizon, true);
  return out;
}

} // namespace lpaf
