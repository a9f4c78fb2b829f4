#include "mmon/render.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>

#include "mmon/error.hpp"

namespace mmon::render {

namespace {

// Fixed-point scale for geometry: 1 pixel = 256 units.
constexpr std::int64_t kFp = 256;
constexpr std::int64_t kFpHalf = kFp / 2;

// Unit vectors (x, y) scaled by 2^16 for vertex k of a regular n-gon, vertex 0
// pointing up (y grows downwards). Rounded from sin(2 pi k / n), -cos(2 pi k / n).
constexpr std::array<std::array<std::int64_t, 2>, 3> kTriangle = {{{0, -65536}, {56756, 32768}, {-56756, 32768}}};
constexpr std::array<std::array<std::int64_t, 2>, 4> kSquare = {{{0, -65536}, {65536, 0}, {0, 65536}, {-65536, 0}}};
constexpr std::array<std::array<std::int64_t, 2>, 5> kPentagon = {
    {{0, -65536}, {62328, -20252}, {38521, 53020}, {-38521, 53020}, {-62328, -20252}}};
constexpr std::array<std::array<std::int64_t, 2>, 6> kHexagon = {
    {{0, -65536}, {56756, -32768}, {56756, 32768}, {0, 65536}, {-56756, 32768}, {-56756, -32768}}};

// Division rounding half away from zero.
std::int64_t div_round(std::int64_t num, std::int64_t den) {
    if (den < 0) {
        num = -num;
        den = -den;
    }
    return num >= 0 ? (num + den / 2) / den : -((-num + den / 2) / den);
}

// Floor division for possibly negative numerators.
std::int64_t div_floor(std::int64_t num, std::int64_t den) {
    std::int64_t q = num / den;
    if ((num % den != 0) && ((num < 0) != (den < 0))) --q;
    return q;
}

struct Point {
    std::int64_t x, y;
};

using Mask = std::vector<std::uint8_t>;

void fill_span(Mask& mask, int size, int y, int x0, int x1) {
    if (y < 0 || y >= size) return;
    x0 = std::max(x0, 0);
    x1 = std::min(x1, size - 1);
    for (int x = x0; x <= x1; ++x) mask[static_cast<std::size_t>(y * size + x)] = 1;
}

// Scanline fill sampling pixel centers; an edge owns the half-open y range
// [y_top, y_bottom) so shared vertices are counted once.
void fill_polygon(Mask& mask, int size, std::span<const Point> verts) {
    std::vector<std::int64_t> xs;
    for (int py = 0; py < size; ++py) {
        const std::int64_t y = py * kFp + kFpHalf;
        xs.clear();
        for (std::size_t i = 0; i < verts.size(); ++i) {
            Point a = verts[i];
            Point b = verts[(i + 1) % verts.size()];
            if (a.y == b.y) continue;
            if (a.y > b.y) std::swap(a, b);
            if (y < a.y || y >= b.y) continue;
            xs.push_back(a.x + div_round((y - a.y) * (b.x - a.x), b.y - a.y));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
            // pixel px is inside when xs[i] <= center < xs[i+1]
            const auto first = static_cast<int>(div_floor(xs[i] - kFpHalf + kFp - 1, kFp));
            const auto last = static_cast<int>(div_floor(xs[i + 1] - kFpHalf - 1, kFp));
            fill_span(mask, size, py, first, last);
        }
    }
}

// Filled midpoint circle on the pixel grid.
void fill_circle(Mask& mask, int size, Point center, std::int64_t radius_fp) {
    const auto cx = static_cast<int>(div_round(center.x - kFpHalf, kFp));
    const auto cy = static_cast<int>(div_round(center.y - kFpHalf, kFp));
    const auto r = static_cast<int>(div_round(radius_fp, kFp));
    int x = r;
    int y = 0;
    int err = 1 - r;
    while (x >= y) {
        fill_span(mask, size, cy + y, cx - x, cx + x);
        fill_span(mask, size, cy - y, cx - x, cx + x);
        fill_span(mask, size, cy + x, cx - y, cx + y);
        fill_span(mask, size, cy - x, cx - y, cx + y);
        ++y;
        if (err < 0) {
            err += 2 * y + 1;
        } else {
            --x;
            err += 2 * (y - x) + 1;
        }
    }
}

template <std::size_t N>
std::vector<Point> polygon(const std::array<std::array<std::int64_t, 2>, N>& unit, Point c, std::int64_t r) {
    std::vector<Point> v;
    for (const auto& u : unit) v.push_back({c.x + div_round(r * u[0], 65536), c.y + div_round(r * u[1], 65536)});
    return v;
}

void draw_entity(Raster& out, const Entity& e, const Box& box) {
    const int size = out.width;
    const std::int64_t scale = static_cast<std::int64_t>(size) * kFp;
    const Point center{div_round((box.x0 + box.x1) * scale, 2 * kBoxUnits),
                       div_round((box.y0 + box.y1) * scale, 2 * kBoxUnits)};
    const std::int64_t half = div_round(std::min(box.x1 - box.x0, box.y1 - box.y0) * scale, 2 * kBoxUnits);
    const std::int64_t radius = div_round((30 + 10 * e.size) * half, 100);

    Mask mask(static_cast<std::size_t>(size * size), 0);
    switch (e.type) {
        case 0: fill_polygon(mask, size, polygon(kTriangle, center, radius)); break;
        case 1: fill_polygon(mask, size, polygon(kSquare, center, radius)); break;
        case 2: fill_polygon(mask, size, polygon(kPentagon, center, radius)); break;
        case 3: fill_polygon(mask, size, polygon(kHexagon, center, radius)); break;
        default: fill_circle(mask, size, center, radius); break;
    }

    auto inside = [&](int x, int y) {
        return x >= 0 && y >= 0 && x < size && y < size && mask[static_cast<std::size_t>(y * size + x)] != 0;
    };
    const std::uint8_t fill = fill_intensity(e.color);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            if (!inside(x, y)) continue;
            const bool edge = !inside(x - 1, y) || !inside(x + 1, y) || !inside(x, y - 1) || !inside(x, y + 1);
            out.at(x, y) = edge ? kOutline : fill;
        }
    }
}

}  // namespace

bool supported_size(int size) { return size == 40 || size == 80; }

Raster render_panel(const PanelSymbolic& panel, ConfigKind config, int size) {
    if (!supported_size(size)) throw UnsupportedSize("unsupported raster size " + std::to_string(size));
    const Configuration& cfg = configuration(config);
    if (panel.components.size() > cfg.components.size()) {
        throw InvalidArgument("panel has more components than its configuration");
    }
    Raster out(size, size);
    for (std::size_t c = 0; c < panel.components.size(); ++c) {
        const auto& slots = cfg.components[c].slots;
        for (const Entity& e : panel.components[c].entities) {
            if (e.slot < 0 || e.slot >= static_cast<int>(slots.size())) throw InvalidArgument("slot out of range");
            if (e.size < 0 || e.size >= kSizeCount || e.color < 0 || e.color >= kColorCount || e.type < 0 ||
                e.type >= kTypeCount) {
                throw InvalidArgument("entity attribute out of domain");
            }
            draw_entity(out, e, slots[static_cast<std::size_t>(e.slot)]);
        }
    }
    return out;
}

std::vector<Raster> render_instance(const PuzzleInstance& instance, int size) {
    std::vector<Raster> out;
    out.reserve(kPanelsPerInstance);
    for (const auto& p : instance.context) out.push_back(render_panel(p, instance.config, size));
    for (const auto& p : instance.candidates) out.push_back(render_panel(p, instance.config, size));
    return out;
}

int count_components(const Raster& raster) {
    std::vector<std::uint8_t> seen(raster.data.size(), 0);
    std::vector<int> stack;
    int count = 0;
    for (int start = 0; start < static_cast<int>(raster.data.size()); ++start) {
        if (seen[static_cast<std::size_t>(start)] || raster.data[static_cast<std::size_t>(start)] == kBackground) {
            continue;
        }
        ++count;
        stack.push_back(start);
        seen[static_cast<std::size_t>(start)] = 1;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            const int x = p % raster.width;
            const int y = p / raster.width;
            const std::array<std::array<int, 2>, 4> nbrs = {{{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}}};
            for (const auto& [nx, ny] : nbrs) {
                if (nx < 0 || ny < 0 || nx >= raster.width || ny >= raster.height) continue;
                const int q = ny * raster.width + nx;
                if (seen[static_cast<std::size_t>(q)] || raster.data[static_cast<std::size_t>(q)] == kBackground) {
                    continue;
                }
                seen[static_cast<std::size_t>(q)] = 1;
                stack.push_back(q);
            }
        }
    }
    return count;
}

int ink_pixels(const Raster& raster) {
    return static_cast<int>(
        std::count_if(raster.data.begin(), raster.data.end(), [](std::uint8_t v) { return v != kBackground; }));
}

}  // namespace mmon::render
