#pragma once

#include <cstdint>
#include <vector>

#include "mmon/puzzle.hpp"

namespace mmon::render {

inline constexpr std::uint8_t kBackground = 255;
inline constexpr std::uint8_t kOutline = 0;

/// Grayscale image, row-major, one byte per pixel.
struct Raster {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Raster() = default;
    Raster(int w, int h, std::uint8_t fill = kBackground)
        : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

    std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y * width + x)]; }
    std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y * width + x)]; }
    friend bool operator==(const Raster&, const Raster&) = default;
};

bool supported_size(int size);

/// Fill intensity of a color level.
constexpr std::uint8_t fill_intensity(int color) { return static_cast<std::uint8_t>(230 - 20 * color); }

/// Renders the panel at size x size pixels. Entities are filled regular
/// polygons (type 0-3: 3 to 6 vertices, vertex 0 up) or circles (type 4),
/// centered in their slot with radius (0.30 + 0.10 size) times the slot half
/// extent, and a one-pixel outline. Components are drawn in order, so inner
/// components sit on top of outer ones. Throws UnsupportedSize unless size is
/// 40 or 80.
Raster render_panel(const PanelSymbolic& panel, ConfigKind config, int size);

/// 16 rasters: context panels 0-7 then candidates 0-7.
std::vector<Raster> render_instance(const PuzzleInstance& instance, int size);

/// Number of 4-connected components of non-background pixels.
int count_components(const Raster& raster);

/// Number of non-background pixels.
int ink_pixels(const Raster& raster);

}  // namespace mmon::render
