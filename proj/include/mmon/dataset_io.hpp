#pragma once

// On-disk dataset layout: a directory holding
//
//   manifest.json  per-instance config name, seed, label, annotation as
//                  [slot, attribute, rule, params] lists, meta-target bits and
//                  the symbolic context/candidate panels
//   panels.bin     "RPM1", u32 count, u16 H, u16 W, then count x 16 x H x W
//                  raw u8 rasters (context 0-7 then candidates 0-7), all
//                  integers little-endian

#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmon/puzzle.hpp"
#include "mmon/render.hpp"

namespace mmon::io {

struct Dataset {
    int size = 0;  // raster side in pixels
    std::vector<PuzzleInstance> instances;
    std::vector<render::Raster> rasters;  // kPanelsPerInstance per instance

    std::size_t count() const { return instances.size(); }
    std::span<const render::Raster> rasters_of(std::size_t i) const {
        return std::span<const render::Raster>(rasters).subspan(i * kPanelsPerInstance, kPanelsPerInstance);
    }
};

/// Renders every instance at `size`.
Dataset make_dataset(std::vector<PuzzleInstance> instances, int size);

nlohmann::json instance_to_json(const PuzzleInstance& instance);
PuzzleInstance instance_from_json(const nlohmann::json& j);

void write_panels(const std::filesystem::path& file, std::span<const render::Raster> rasters, std::size_t count,
                  int size);
std::vector<render::Raster> read_panels(const std::filesystem::path& file, std::size_t* count, int* size);

/// Throws IoError (with the path) or InvalidArgument on inconsistent counts.
void serialize_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Throws FormatError on a malformed manifest or panels file and IoError when
/// a file cannot be opened.
Dataset deserialize_dataset(const std::filesystem::path& dir);

}  // namespace mmon::io
