#pragma once

// Synthetic structural volumes for end-to-end checks. Central axial slices
// carry a class-specific checkerboard (period and amplitude per class, sign
// alternating between subjects) over Gaussian noise; peripheral slices are a
// flat background with one small bright patch.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "cogdecomp/error.hpp"
#include "cogdecomp/manifest.hpp"
#include "cogdecomp/random.hpp"
#include "cogdecomp/volume_io.hpp"

namespace cogdecomp {

struct SynthOptions {
  std::size_t subjects_per_class = 6;
  std::size_t nz = 30;
  std::size_t side = 32;
  std::uint64_t seed = 0;
  std::vector<std::string> labels{"CN", "MCI", "AD"};
};

/// Number of near-constant slices at each end of the volume.
inline std::size_t synth_margin(std::size_t nz) { return std::max<std::size_t>(1, nz / 6); }

inline Volume synth_volume(const std::string& subject_id, std::size_t class_index, std::size_t subject_index,
                           const SynthOptions& opt) {
  const std::size_t periods[] = {2, 4, 8};
  const std::size_t period = periods[class_index % 3] * (1 + class_index / 3);
  const double amplitude = 40.0 + 15.0 * static_cast<double>(class_index % 3);
  const double sign = subject_index % 2 == 0 ? 1.0 : -1.0;
  const double base = 300.0;
  const double noise_sd = 8.0;
  const std::size_t margin = synth_margin(opt.nz);

  Rng rng(derive_seed(opt.seed, "synth-" + subject_id));
  Volume v{subject_id, {opt.side, opt.side, opt.nz}, std::vector<double>(opt.side * opt.side * opt.nz), nifti::kInt16};
  for (std::size_t z = 0; z < opt.nz; ++z) {
    const bool central = z >= margin && z + margin < opt.nz;
    for (std::size_t y = 0; y < opt.side; ++y) {
      for (std::size_t x = 0; x < opt.side; ++x) {
        double value;
        if (central) {
          const double checker = ((x / period + y / period) % 2 == 0) ? 1.0 : -1.0;
          value = base + sign * amplitude * checker + noise_sd * rng.normal();
        } else {
          value = (x < 3 && y < 3) ? base : 0.0;
        }
        v.voxels[v.linear_index(x, y, z)] = std::round(value);
      }
    }
  }
  return v;
}

/// Writes <out>/data/<subject>.nii for every subject plus <out>/manifest.csv.
inline Manifest cmd_synth(const std::filesystem::path& out_dir, const SynthOptions& opt) {
  if (opt.subjects_per_class < 2) throw Error(Errc::InvalidConfig, "need at least 2 subjects per class");
  if (opt.nz < 4) throw Error(Errc::InvalidConfig, "nz must be >= 4");
  if (opt.side < 2) throw Error(Errc::InvalidConfig, "side must be >= 2");
  if (opt.labels.empty()) throw Error(Errc::InvalidConfig, "no class labels");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "data", ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + (out_dir / "data").string());

  Manifest m;
  for (std::size_t c = 0; c < opt.labels.size(); ++c) {
    for (std::size_t s = 0; s < opt.subjects_per_class; ++s) {
      char id[64];
      std::snprintf(id, sizeof id, "sub-%s-%03zu", opt.labels[c].c_str(), s + 1);
      const auto path = out_dir / "data" / (std::string(id) + ".nii");
      write_nifti(path, synth_volume(id, c, s, opt), nifti::kInt16);
      m.push_back({id, opt.labels[c], path, std::nullopt, {}, std::nullopt});
    }
  }
  save_manifest(out_dir / "manifest.csv", m);
  return m;
}

}  // namespace cogdecomp
