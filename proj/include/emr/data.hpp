#pragma once

#include "emr/kspace.hpp"
#include "emr/metrics.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace emr {

struct Subject
{
  std::string               id;
  std::vector<ComplexImage> slices;
};

struct Dataset
{
  std::string          name;
  Index                h = 0;
  Index                w = 0;
  std::vector<Subject> subjects;

  std::size_t slice_count() const;
  std::vector<std::string> subject_ids() const;
};

/*
 * Reads a schema-1 manifest:
 *   {"schema": 1, "name": ..., "H": ..., "W": ..., "dtype": "float32-le",
 *    "subjects": [{"id": ..., "slices": ["subject_<id>_slice_<k>.f32", ...]}]}
 * Slice paths are relative to the manifest. Each subject is divided by its
 * maximum so values land in [0, 1]; the imaginary channel is zero.
 * Loading fans out over EMR_NUM_WORKERS threads with ordered assembly.
 */
Dataset load_dataset(std::filesystem::path const &manifest);

/// Writes float32 slices and a manifest; returns the manifest path.
std::filesystem::path export_dataset(Dataset const &ds, std::filesystem::path const &dir);

std::string slice_filename(std::string const &subject, std::size_t k);

struct Ellipse
{
  double intensity, a, b, x0, y0, phi_deg;
};

/// The ten-ellipse modified (high-contrast) Shepp-Logan head.
std::vector<Ellipse> shepp_logan_ellipses();
RealImage            render_ellipses(Index h, Index w, std::vector<Ellipse> const &ellipses);
RealImage            shepp_logan(Index h, Index w);
/// Seeded perturbation of the head (shift, scale, rotation, inner contrasts).
RealImage            phantom_variant(Index h, Index w, std::uint64_t seed);

/// Synthetic cohort: `subjects` heads with `slices` perturbed slices each.
Dataset phantom_dataset(Index h, Index w, int subjects, int slices, std::uint64_t seed);

/// One training example: zero-filled input, measured k-space, mask and target.
struct Sample
{
  ComplexImage x;
  KSpaceGrid   k0;
  SamplingMask mask;
  ComplexImage y;
  std::string  subject;
};

Sample simulate_pair(ComplexImage const &y, double rate, std::uint64_t mask_seed);

/// Simulates every slice of the listed subjects; the mask seed follows the slice's position in the dataset.
std::vector<Sample> make_samples(Dataset const &ds, std::vector<std::string> const &subjects, double rate, std::uint64_t seed);

} // namespace emr
