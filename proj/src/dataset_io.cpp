#include "mmon/dataset_io.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "mmon/error.hpp"
#include "mmon/le_bytes.hpp"

namespace mmon::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<char, 4> kPanelsMagic = {'R', 'P', 'M', '1'};

json panel_to_json(const PanelSymbolic& p) {
    json comps = json::array();
    for (const auto& comp : p.components) {
        json ents = json::array();
        for (const Entity& e : comp.entities) ents.push_back({e.slot, e.type, e.size, e.color});
        comps.push_back(std::move(ents));
    }
    return comps;
}

PanelSymbolic panel_from_json(const json& j) {
    PanelSymbolic p;
    for (const auto& comp : j) {
        ComponentPanel cp;
        for (const auto& e : comp) {
            if (!e.is_array() || e.size() != 4) throw FormatError("entity must be [slot, type, size, color]");
            cp.entities.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<int>(), e[3].get<int>()});
        }
        p.components.push_back(std::move(cp));
    }
    return p;
}

json rule_params(const RuleKind& r) {
    return r.family == RuleFamily::Constant ? json::array() : json::array({r.param});
}

}  // namespace

Dataset make_dataset(std::vector<PuzzleInstance> instances, int size) {
    Dataset d;
    d.size = size;
    d.rasters.reserve(instances.size() * kPanelsPerInstance);
    for (const auto& inst : instances) {
        auto r = render::render_instance(inst, size);
        std::move(r.begin(), r.end(), std::back_inserter(d.rasters));
    }
    d.instances = std::move(instances);
    return d;
}

json instance_to_json(const PuzzleInstance& inst) {
    json ann = json::array();
    for (const RuleSpec& r : inst.annotation.rules) {
        ann.push_back({r.component_slot, attribute_name(r.attribute), rule_family_name(r.rule.family),
                       rule_params(r.rule)});
    }
    json context = json::array();
    json candidates = json::array();
    for (const auto& p : inst.context) context.push_back(panel_to_json(p));
    for (const auto& p : inst.candidates) candidates.push_back(panel_to_json(p));
    return {
        {"config", config_name(inst.config)},
        {"seed", inst.seed},
        {"label", inst.label},
        {"annotation", std::move(ann)},
        {"meta", inst.meta.bits},
        {"context", std::move(context)},
        {"candidates", std::move(candidates)},
    };
}

PuzzleInstance instance_from_json(const json& j) {
    try {
        PuzzleInstance inst;
        inst.config = parse_config(j.at("config").get<std::string>());
        inst.seed = j.at("seed").get<std::uint64_t>();
        inst.label = j.at("label").get<int>();
        if (inst.label < 0 || inst.label > 7) throw FormatError("label out of range");
        for (const auto& r : j.at("annotation")) {
            if (!r.is_array() || r.size() != 4) throw FormatError("annotation entries are [slot, attribute, rule, params]");
            RuleSpec spec;
            spec.component_slot = r[0].get<int>();
            spec.attribute = parse_attribute(r[1].get<std::string>());
            spec.rule.family = parse_rule_family(r[2].get<std::string>());
            spec.rule.param = r[3].empty() ? 0 : r[3][0].get<int>();
            if (!spec.rule.valid()) throw FormatError("invalid rule parameters");
            inst.annotation.rules.push_back(spec);
        }
        const auto bits = j.at("meta").get<std::vector<int>>();
        if (bits.size() != static_cast<std::size_t>(kMetaTargetLength)) throw FormatError("meta-target length");
        for (std::size_t i = 0; i < bits.size(); ++i) inst.meta.bits[i] = static_cast<std::uint8_t>(bits[i] != 0);
        if (inst.meta != encode_meta_target(inst.annotation)) {
            throw FormatError("meta-target disagrees with annotation");
        }
        const auto& ctx = j.at("context");
        const auto& cands = j.at("candidates");
        if (ctx.size() != 8 || cands.size() != 8) throw FormatError("expected 8 context panels and 8 candidates");
        const Configuration& cfg = configuration(inst.config);
        for (std::size_t i = 0; i < 8; ++i) {
            inst.context[i] = panel_from_json(ctx[i]);
            inst.candidates[i] = panel_from_json(cands[i]);
            validate_panel(inst.context[i], cfg);
            validate_panel(inst.candidates[i], cfg);
        }
        return inst;
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("bad manifest entry: ") + e.what());
    }
}

void write_panels(const fs::path& file, std::span<const render::Raster> rasters, std::size_t count, int size) {
    if (rasters.size() != count * kPanelsPerInstance) throw InvalidArgument("raster count does not match instances");
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write " + file.string());
    std::string header(kPanelsMagic.begin(), kPanelsMagic.end());
    le::put_u32(header, static_cast<std::uint32_t>(count));
    le::put_u16(header, static_cast<std::uint16_t>(size));
    le::put_u16(header, static_cast<std::uint16_t>(size));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& r : rasters) {
        if (r.width != size || r.height != size) throw InvalidArgument("raster size mismatch");
        out.write(reinterpret_cast<const char*>(r.data.data()), static_cast<std::streamsize>(r.data.size()));
    }
    if (!out) throw IoError("write failed: " + file.string());
}

std::vector<render::Raster> read_panels(const fs::path& file, std::size_t* count, int* size) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open " + file.string());
    std::string bytes(static_cast<std::size_t>(in.tellg()), '\0');
    in.seekg(0);
    if (!in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))) throw IoError("cannot read " + file.string());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kPanelsMagic.data(), 4) != 0) {
        throw FormatError("bad magic in " + file.string());
    }
    const std::uint32_t n = le::get_u32(bytes, 4);
    const int h = le::get_u16(bytes, 8);
    const int w = le::get_u16(bytes, 10);
    if (h != w) throw FormatError("non-square panels in " + file.string());
    const std::size_t per = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    if (bytes.size() != 12 + static_cast<std::size_t>(n) * kPanelsPerInstance * per) {
        throw FormatError("length mismatch in " + file.string());
    }
    std::vector<render::Raster> rasters;
    rasters.reserve(static_cast<std::size_t>(n) * kPanelsPerInstance);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * kPanelsPerInstance; ++i) {
        render::Raster r(w, h);
        std::memcpy(r.data.data(), bytes.data() + 12 + i * per, per);
        rasters.push_back(std::move(r));
    }
    *count = n;
    *size = h;
    return rasters;
}

void serialize_dataset(const Dataset& dataset, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    json manifest = {{"format", "mmon-dataset"}, {"version", 1}, {"count", dataset.count()},
                     {"height", dataset.size}, {"width", dataset.size}};
    json items = json::array();
    for (const auto& inst : dataset.instances) items.push_back(instance_to_json(inst));
    manifest["instances"] = std::move(items);

    const fs::path mpath = dir / "manifest.json";
    std::ofstream out(mpath);
    if (!out) throw IoError("cannot write " + mpath.string());
    out << manifest.dump(1) << '\n';
    if (!out) throw IoError("write failed: " + mpath.string());
    write_panels(dir / "panels.bin", dataset.rasters, dataset.count(), dataset.size);
}

Dataset deserialize_dataset(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw IoError("cannot open " + mpath.string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError("cannot parse " + mpath.string() + ": " + e.what());
    }
    Dataset d;
    std::size_t count = 0;
    d.rasters = read_panels(dir / "panels.bin", &count, &d.size);
    try {
        if (manifest.at("format") != "mmon-dataset") throw FormatError("not a dataset manifest");
        const auto& items = manifest.at("instances");
        if (items.size() != count || manifest.at("count").get<std::size_t>() != count) {
            throw FormatError("manifest and panels.bin disagree on instance count");
        }
        for (const auto& item : items) d.instances.push_back(instance_from_json(item));
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError("bad manifest " + mpath.string() + ": " + e.what());
    }
    return d;
}

}  // namespace mmon::io
