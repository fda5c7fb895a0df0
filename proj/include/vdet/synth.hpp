#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vdet/box.hpp"
#include "vdet/tensor.hpp"

namespace vdet::synth {

struct GenerationError : Error {
  using Error::Error;
};

struct Sphere {
  double cx = 0, cy = 0;
  std::int64_t cz = 0;
  double radius = 0;
};

/// Vessel-like cylinder running roughly along the depth axis; axis point (x, y) per covered slice.
struct Tube {
  std::int64_t z0 = 0, z1 = 0;  // inclusive slice range
  std::vector<double> axis_x, axis_y;
  double radius = 0;
};

struct SynthConfig {
  std::int64_t depth = 16, height = 64, width = 64;
  int min_lesions = 1, max_lesions = 3;
  double min_radius = 2.0, max_radius = 4.0;
  int min_tubes = 1, max_tubes = 2;
  double min_tube_radius = 2.0, max_tube_radius = 3.0;
  int min_tube_length = 8;
  double max_tube_slope = 0.15;
  double noise_sigma = 0.05;
  double intensity = 0.5;
  double background_level = 0.2;
  double background_amplitude = 0.05;
  int max_retries = 200;

  void validate() const;
};

struct SyntheticVolume {
  std::string volume_id;
  Tensor voxels;  // [D, H, W], values in [0, 1], float32-representable
  std::vector<Sphere> lesions;
  std::vector<Tube> distractors;
  std::vector<std::vector<LesionBox>> gt_boxes;  // per slice

  std::int64_t depth() const { return voxels.dim(0); }
  std::vector<Tensor> slices() const;
  std::int64_t gt_count() const;
};

/// Soft-edged object profile in [0, 1] at distance `dist` from the centre of an object of `radius`.
double object_profile(double dist, double radius);

/// Ground-truth box of a sphere on slice z, if its cross-section radius is at least one voxel.
bool sphere_box(const Sphere& s, std::int64_t z, LesionBox& out);

SyntheticVolume generate_volume(std::uint64_t seed, const SynthConfig& cfg, std::string volume_id = "volume");

/// Volume file: "VDETVOL1", u64 LE header length, JSON header, float32 LE payload (W fastest).
void write_volume_file(const std::filesystem::path& path, const std::string& volume_id, const Tensor& voxels);
struct LoadedVolume {
  std::string volume_id;
  Tensor voxels;
};
LoadedVolume read_volume_file(const std::filesystem::path& path);

/// One JSON record per box: {volume_id, slice, x1, y1, x2, y2} (+ score when with_score).
void write_boxes_jsonl(const std::filesystem::path& path, const std::string& volume_id,
                       const std::vector<LesionBox>& boxes, bool with_score);
std::vector<LesionBox> read_boxes_jsonl(const std::filesystem::path& path);

}  // namespace vdet::synth
