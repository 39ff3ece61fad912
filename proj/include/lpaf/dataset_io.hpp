#pragma once

// On-disk formats for datasets and images.
//
// Dataset record file (one per split), little-endian:
//
//   header   "LPAF"  u16 version(=1)  u32 trajectories  u32 pairs
//   trajectory
//            u64 scene_seed  i32 task_id  f32 theta_deg  u8 success  u32 steps
//            per step: f32 gripper[2]  f32 action[2]  f32 image[32*32*3] (HWC)
//   pair     u64 scene_seed  i32 task_id  f32 theta_deg  f32 gripper[2]
//            f32 reference[32*32*3]  f32 auxiliary[32*32*3]
//
// Scenes are stored by (task_id, seed) and regenerated with sample_scene on
// load, which is bit-exact.

#include <filesystem>
#include <fstream>
#include <ostream>
#include <streambuf>
#include <string>

#include <nlohmann/json.hpp>

#include "lpaf/binio.hpp"
#include "lpaf/rng.hpp"
#include "lpaf/worldgen.hpp"

namespace lpaf {

inline constexpr std::uint16_t kDatasetVersion = 1;

namespace detail {

inline void put_image(std::ostream& os, const Image& img) {
  for (float v : img.data) binio::put_f32(os, v);
}

inline Image get_image(std::istream& is) {
  Image img;
  for (float& v : img.data) v = binio::get_f32(is);
  return img;
}

inline void put_vec(std::ostream& os, Vec2 v) {
  binio::put_f32(os, static_cast<float>(v.x));
  binio::put_f32(os, static_cast<float>(v.y));
}

inline Vec2 get_vec(std::istream& is) {
  const double x = binio::get_f32(is);
  const double y = binio::get_f32(is);
  return {x, y};
}

/// ostream sink that only hashes what is written.
class DigestBuf : public std::streambuf {
public:
  Digest digest;

protected:
  int_type overflow(int_type ch) override {
    if (ch != traits_type::eof()) {
      const char c = static_cast<char>(ch);
      digest.update(&c, 1);
    }
    return ch;
  }
  std::streamsize xsputn(const char* s, std::streamsize n) override {
    digest.update(s, static_cast<std::size_t>(n));
    return n;
  }
};

} // namespace detail

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  binio::put_magic(os, "LPAF");
  binio::put_u16(os, kDatasetVersion);
  binio::put_u32(os, static_cast<std::uint32_t>(ds.trajectories.size()));
  binio::put_u32(os, static_cast<std::uint32_t>(ds.paired_states.size()));
  for (const auto& tr : ds.trajectories) {
    binio::put_u64(os, tr.scene.seed);
    binio::put_i32(os, tr.task_id);
    binio::put_f32(os, static_cast<float>(tr.view.theta_deg));
    binio::put_u8(os, tr.success ? 1 : 0);
    binio::put_u32(os, static_cast<std::uint32_t>(tr.steps.size()));
    for (const auto& st : tr.steps) {
      detail::put_vec(os, st.gripper);
      detail::put_vec(os, st.action);
      detail::put_image(os, st.image);
    }
  }
  for (const auto& p : ds.paired_states) {
    binio::put_u64(os, p.scene.seed);
    binio::put_i32(os, p.scene.task_id);
    binio::put_f32(os, static_cast<float>(p.theta_deg));
    detail::put_vec(os, p.gripper);
    detail::put_image(os, p.reference);
    detail::put_image(os, p.auxiliary);
  }
}

inline Dataset read_dataset(std::istream& is) {
  binio::expect_magic(is, "LPAF");
  const auto version = binio::get_u16(is);
  require(version == kDatasetVersion, ErrorKind::Format, "dataset: unsupported version " + std::to_string(version));
  const auto n_traj = binio::get_u32(is);
  const auto n_pairs = binio::get_u32(is);
  Dataset ds;
  ds.trajectories.reserve(n_traj);
  for (std::uint32_t i = 0; i < n_traj; ++i) {
    Trajectory tr;
    const auto seed = binio::get_u64(is);
    tr.task_id = binio::get_i32(is);
    tr.view = ViewSpec::at(binio::get_f32(is));
    tr.success = binio::get_u8(is) != 0;
    tr.scene = sample_scene(tr.task_id, seed);
    const auto steps = binio::get_u32(is);
    require(steps <= 100000, ErrorKind::Format, "dataset: implausible step count");
    tr.steps.reserve(steps);
    for (std::uint32_t k = 0; k < steps; ++k) {
      Step st;
      st.gripper = detail::get_vec(is);
      st.action = detail::get_vec(is);
      st.image = detail::get_image(is);
      tr.steps.push_back(std::move(st));
    }
    ds.trajectories.push_back(std::move(tr));
  }
  ds.paired_states.reserve(n_pairs);
  for (std::uint32_t i = 0; i < n_pairs; ++i) {
    PairedState p;
    const auto seed = binio::get_u64(is);
    const int task = binio::get_i32(is);
    p.scene = sample_scene(task, seed);
    p.theta_deg = binio::get_f32(is);
    p.gripper = detail::get_vec(is);
    p.reference = detail::get_image(is);
    p.auxiliary = detail::get_image(is);
    ds.paired_states.push_back(std::move(p));
  }
  return ds;
}

inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  write_dataset(os, ds);
  if (!os) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::MissingInput, "missing dataset " + path.string());
  return read_dataset(is);
}

/// Digest of the serialized bytes; identical for an in-memory dataset and
/// its on-disk copy.
inline std::string dataset_digest(const Dataset& ds) {
  detail::DigestBuf buf;
  std::ostream os(&buf);
  write_dataset(os, ds);
  return buf.digest.hex();
}

inline nlohmann::json to_json(const DatasetProtocol& p) {
  return {{"a_deg", p.a_deg}, {"v", p.v}, {"s", p.s}, {"j", p.j}, {"seed", p.seed}, {"horizon", p.horizon}};
}

inline DatasetProtocol protocol_from_json(const nlohmann::json& j) {
  DatasetProtocol p;
  p.a_deg = j.value("a_deg", p.a_deg);
  p.v = j.value("v", p.v);
  p.s = j.value("s", p.s);
  p.j = j.value("j", p.j);
  p.seed = j.value("seed", p.seed);
  p.horizon = j.value("horizon", p.horizon);
  p.validate();
  return p;
}

/// Binary PPM (P6), 8-bit channels.
inline void write_ppm(const std::filesystem::path& path, int width, int height, const std::vector<float>& rgb) {
  require(rgb.size() == static_cast<std::size_t>(width * height * 3), ErrorKind::Dimension,
          "dimension error: ppm buffer size");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  os << "P6\n" << width << ' ' << height << "\n255\n";
  for (float v : rgb) {
    const long q = std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f);
    os.put(static_cast<char>(static_cast<unsigned char>(q)));
  }
  if (!os) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  write_ppm(path, Image::kWidth, Image::kHeight, img.data);
}

} // namespace lpaf
