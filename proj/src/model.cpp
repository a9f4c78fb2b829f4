#include "mmon/model.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "mmon/error.hpp"
#include "mmon/rng.hpp"

namespace mmon::model {

using ag::ReduceKind;

namespace {

Tensor he_uniform(ag::Shape shape, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / fan_in);
    std::vector<double> v(ag::numel(shape));
    for (double& x : v) x = rng.uniform_real(-bound, bound);
    return Tensor(std::move(shape), std::move(v), true);
}

Linear make_linear(int in, int out, Rng& rng) {
    return {he_uniform({in, out}, in, rng), Tensor::zeros({out}, true)};
}

Mlp make_mlp(int in, int hidden, int out, Rng& rng) {
    return {make_linear(in, hidden, rng), make_linear(hidden, out, rng)};
}

Encoder make_encoder(int in_channels, const ModelConfig& c, Rng& rng) {
    Encoder e;
    e.k1 = he_uniform({c.conv1_channels, in_channels, 3, 3}, in_channels * 9, rng);
    e.b1 = Tensor::zeros({c.conv1_channels}, true);
    e.k2 = he_uniform({c.conv2_channels, c.conv1_channels, 3, 3}, c.conv1_channels * 9, rng);
    e.b2 = Tensor::zeros({c.conv2_channels}, true);
    e.proj = make_linear(c.conv2_channels, c.d, rng);
    return e;
}

// Rows drawn uniformly, then Gram-Schmidt; every row ends at unit norm.
Tensor orthonormal_rows(int rows, int cols, Rng& rng) {
    std::vector<double> v(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
    for (int r = 0; r < rows; ++r) {
        double* row = v.data() + static_cast<std::ptrdiff_t>(r) * cols;
        double norm = 0;
        while (norm < 1e-6) {
            for (int i = 0; i < cols; ++i) row[i] = rng.uniform_real(-1, 1);
            for (int q = 0; q < r; ++q) {
                const double* prev = v.data() + static_cast<std::ptrdiff_t>(q) * cols;
                const double dot = std::inner_product(row, row + cols, prev, 0.0);
                for (int i = 0; i < cols; ++i) row[i] -= dot * prev[i];
            }
            norm = std::sqrt(std::inner_product(row, row + cols, row, 0.0));
        }
        for (int i = 0; i < cols; ++i) row[i] /= norm;
    }
    return Tensor({rows, cols}, std::move(v), true);
}

template <typename Fn>
void visit(const Params& p, Fn&& fn) {
    auto linear = [&](const std::string& name, const Linear& l, int module) {
        fn(name + ".w", l.w, module);
        fn(name + ".b", l.b, module);
    };
    auto mlp = [&](const std::string& name, const Mlp& m, int module) {
        linear(name + ".l1", m.l1, module);
        linear(name + ".l2", m.l2, module);
    };
    auto encoder = [&](const std::string& name, const Encoder& e) {
        fn(name + ".conv1.w", e.k1, -1);
        fn(name + ".conv1.b", e.b1, -1);
        fn(name + ".conv2.w", e.k2, -1);
        fn(name + ".conv2.b", e.b2, -1);
        linear(name + ".proj", e.proj, -1);
    };
    encoder("enc1", p.enc1);
    encoder("enc3", p.enc3);
    encoder("enc6", p.enc6);
    mlp("relation.g", p.g, -1);
    mlp("relation.f", p.f, -1);
    for (int j = 0; j < kModuleCount; ++j) {
        const auto slot = j / kAttributeCount;
        const auto attr = static_cast<Attribute>(j % kAttributeCount);
        mlp("module." + std::to_string(slot) + "." + std::string(attribute_name(attr)),
            p.modules[static_cast<std::size_t>(j)], j);
    }
    fn(std::string("rule_table"), p.rule_table, -1);
}

Tensor linear(Tape& t, const Tensor& x, const Linear& l) { return ag::add_bias(t, ag::matmul(t, x, l.w), l.b); }

Tensor mlp(Tape& t, const Tensor& x, const Mlp& m) { return linear(t, ag::relu(t, linear(t, x, m.l1)), m.l2); }

// images [n x c x H x W] -> [n x d]
Tensor encode(Tape& t, const Tensor& images, const Encoder& e) {
    Tensor h = ag::relu(t, ag::add_channel_bias(t, ag::conv2d(t, images, e.k1, 2, 1), e.b1));
    h = ag::relu(t, ag::add_channel_bias(t, ag::conv2d(t, h, e.k2, 2, 1), e.b2));
    const int n = h.dim(0);
    const int c = h.dim(1);
    h = ag::reduce(t, ReduceKind::Mean, ag::reshape(t, h, {n, c, h.dim(2) * h.dim(3)}), 2);
    return linear(t, h, e.proj);
}

// Channel stacks of single-channel panels: groups of `per` panel indices.
Tensor stack_panels(Tape& t, const Tensor& panels, std::span<const int> idx, int per) {
    const int h = panels.dim(2);
    const int w = panels.dim(3);
    Tensor flat = ag::reshape(t, panels, {panels.dim(0), h * w});
    return ag::reshape(t, ag::gather_rows(t, flat, idx), {static_cast<int>(idx.size()) / per, per, h, w});
}

void check_panels(const Tensor& panels, int count) {
    if (panels.rank() != 4 || panels.dim(0) != count || panels.dim(1) != 1 || panels.dim(2) != panels.dim(3)) {
        throw ShapeMismatch("expected " + std::to_string(count) + " single-channel square panels, got " +
                            ag::shape_str(panels.shape()));
    }
}

constexpr std::array<std::pair<int, int>, 6> kOrderedPairs = {{{0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}}};

// Relation head over the ordered pairs of each row of R ([3 rows x d] blocks).
Tensor relation_head(Tape& t, const Tensor& panel_features, std::span<const std::array<int, 3>> rows,
                     const Params& p) {
    std::vector<int> left, right;
    for (const auto& row : rows) {
        for (auto [a, b] : kOrderedPairs) {
            left.push_back(row[static_cast<std::size_t>(a)]);
            right.push_back(row[static_cast<std::size_t>(b)]);
        }
    }
    const std::array<Tensor, 2> halves = {ag::gather_rows(t, panel_features, left),
                                          ag::gather_rows(t, panel_features, right)};
    Tensor pairs = mlp(t, ag::concat(t, halves, 1), p.g);
    return mlp(t, ag::sum_row_groups(t, pairs, static_cast<int>(kOrderedPairs.size())), p.f);
}

Tensor repeat_row(Tape& t, const Tensor& m, int row, int times) {
    const std::vector<int> idx(static_cast<std::size_t>(times), row);
    return ag::gather_rows(t, m, idx);
}

Tensor row_range(Tape& t, const Tensor& m, int first, int count) {
    std::vector<int> idx(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), first);
    return ag::gather_rows(t, m, idx);
}

}  // namespace

Params::Params(ModelConfig cfg, std::uint64_t seed) : config(cfg) {
    Rng rng(seed);
    enc1 = make_encoder(1, cfg, rng);
    enc3 = make_encoder(3, cfg, rng);
    enc6 = make_encoder(6, cfg, rng);
    g = make_mlp(2 * cfg.d, cfg.relation_hidden, cfg.d, rng);
    f = make_mlp(cfg.d, cfg.d, cfg.d, rng);
    for (auto& m : modules) m = make_mlp(cfg.d, cfg.module_hidden, cfg.dt, rng);
    rule_table = orthonormal_rows(kRuleFamilyCount, cfg.dt, rng);
}

std::vector<Tensor> Params::tensors() const {
    std::vector<Tensor> out;
    visit(*this, [&](const std::string&, const Tensor& t, int) { out.push_back(t); });
    return out;
}

ag::NamedTensors Params::named() const {
    ag::NamedTensors out;
    visit(*this, [&](const std::string& name, const Tensor& t, int) { out.emplace_back(name, t); });
    return out;
}

std::vector<int> Params::module_of() const {
    std::vector<int> out;
    visit(*this, [&](const std::string&, const Tensor&, int module) { out.push_back(module); });
    return out;
}

void Params::assign(const ag::NamedTensors& in) {
    const ag::NamedTensors mine = named();
    if (in.size() != mine.size()) {
        throw FormatError("checkpoint holds " + std::to_string(in.size()) + " tensors, model needs " +
                          std::to_string(mine.size()));
    }
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i].first != mine[i].first || in[i].second.shape() != mine[i].second.shape()) {
            throw FormatError("checkpoint tensor " + in[i].first + " " + ag::shape_str(in[i].second.shape()) +
                              " does not match " + mine[i].first + " " + ag::shape_str(mine[i].second.shape()));
        }
    }
    for (std::size_t i = 0; i < in.size(); ++i) {
        Tensor dst = mine[i].second;
        std::copy(in[i].second.values().begin(), in[i].second.values().end(), dst.values().begin());
    }
}

Params Params::clone() const {
    Params out(config, 0);
    out.assign(named());
    return out;
}

void save_params(const std::filesystem::path& file, const Params& params) {
    ag::NamedTensors tensors = params.named();
    const ModelConfig& c = params.config;
    // Dimensions travel with the weights so a checkpoint is self-describing.
    tensors.emplace(tensors.begin(), "config",
                    Tensor({6}, {double(c.d), double(c.dt), double(c.relation_hidden), double(c.module_hidden),
                                 double(c.conv1_channels), double(c.conv2_channels)}));
    ag::save_checkpoint(file, tensors);
}

Params load_params(const std::filesystem::path& file) {
    ag::NamedTensors tensors = ag::load_checkpoint(file);
    if (tensors.empty() || tensors.front().first != "config" || tensors.front().second.size() != 6) {
        throw FormatError("checkpoint lacks a model configuration");
    }
    auto v = tensors.front().second.values();
    for (double x : v) {
        if (!(x >= 1 && x <= 4096) || x != std::floor(x)) throw FormatError("bad model configuration");
    }
    ModelConfig c{int(v[0]), int(v[1]), int(v[2]), int(v[3]), int(v[4]), int(v[5])};
    tensors.erase(tensors.begin());
    Params p(c, 0);
    p.assign(tensors);
    return p;
}

std::string_view mode_name(Mode m) { return m == Mode::Meta ? "meta" : "plain"; }

Mode parse_mode(std::string_view name) {
    if (name == "meta") return Mode::Meta;
    if (name == "plain") return Mode::Plain;
    throw InvalidArgument("unknown mode '" + std::string(name) + "' (expected plain or meta)");
}

Tensor panels_tensor(std::span<const render::Raster> panels) {
    if (panels.empty()) throw ShapeMismatch("no panels");
    const int h = panels[0].height;
    const int w = panels[0].width;
    std::vector<double> v;
    v.reserve(panels.size() * static_cast<std::size_t>(h * w));
    for (const auto& r : panels) {
        if (r.height != h || r.width != w) throw ShapeMismatch("panels differ in size");
        for (std::uint8_t px : r.data) v.push_back((255.0 - px) / 64.0);
    }
    return Tensor({static_cast<int>(panels.size()), 1, h, w}, std::move(v));
}

Tensor encode_panelwise(Tape& t, const Tensor& row, const Params& p) {
    check_panels(row, 3);
    const std::array<std::array<int, 3>, 1> rows = {{{0, 1, 2}}};
    return ag::reshape(t, relation_head(t, encode(t, row, p.enc1), rows, p), {p.config.d});
}

Tensor encode_rowwise(Tape& t, const Tensor& row, const Params& p) {
    check_panels(row, 3);
    return ag::reshape(t, encode(t, ag::reshape(t, row, {1, 3, row.dim(2), row.dim(3)}), p.enc3), {p.config.d});
}

std::array<Tensor, 3> encode_overall(Tape& t, const Tensor& r1, const Tensor& r2, const Tensor& r3,
                                     const Params& p) {
    check_panels(r1, 3);
    check_panels(r2, 3);
    check_panels(r3, 3);
    if (r1.shape() != r2.shape() || r1.shape() != r3.shape()) throw ShapeMismatch("rows differ in size");
    const std::array<Tensor, 6> parts = {r2, r3, r1, r3, r1, r2};
    Tensor all = ag::concat(t, parts, 0);  // [18 x 1 x H x W]
    Tensor stacks = ag::reshape(t, all, {3, 6, r1.dim(2), r1.dim(3)});
    Tensor mo = encode(t, stacks, p.enc6);
    const int d = p.config.d;
    return {ag::reshape(t, row_range(t, mo, 0, 1), {d}), ag::reshape(t, row_range(t, mo, 1, 1), {d}),
            ag::reshape(t, row_range(t, mo, 2, 1), {d})};
}

std::vector<ActiveModule> active_modules(Mode mode, ConfigKind config, const RuleAnnotation* annotation) {
    std::vector<ActiveModule> out;
    if (mode == Mode::Meta) {
        if (annotation == nullptr) throw MissingMeta("meta mode needs the rule annotation");
        for (const RuleSpec& r : annotation->rules) {
            out.push_back({module_index(r.component_slot, r.attribute), r.rule.family});
        }
        return out;
    }
    const Configuration& cfg = configuration(config);
    for (int c = 0; c < cfg.component_count(); ++c) {
        for (Attribute a : kAllAttributes) {
            const bool layout = a == Attribute::Number || a == Attribute::Position;
            if (layout && cfg.components[static_cast<std::size_t>(c)].capacity() == 1) continue;
            out.push_back({module_index(c, a), RuleFamily::Constant});
        }
    }
    return out;
}

Transform module_transform(Tape& t, const Tensor& e, const Params& p, std::span<const ActiveModule> active) {
    Transform out;
    for (const ActiveModule& m : active) {
        out.outputs.push_back(mlp(t, e, p.modules[static_cast<std::size_t>(m.module)]));
        out.tau = out.tau.defined() ? ag::add(t, out.tau, out.outputs.back()) : out.outputs.back();
    }
    if (!out.tau.defined()) {
        const int rows = e.rank() == 2 ? e.dim(0) : 1;
        out.tau = Tensor::zeros(e.rank() == 2 ? ag::Shape{rows, p.config.dt} : ag::Shape{p.config.dt});
    }
    return out;
}

RuleChoice infer_rule(std::span<const double> output, const Tensor& table) {
    if (table.rank() != 2 || static_cast<std::size_t>(table.dim(1)) != output.size()) {
        throw ShapeMismatch("rule table " + ag::shape_str(table.shape()) + " vs output of length " +
                            std::to_string(output.size()));
    }
    Tape quiet(false);
    const Tensor v({static_cast<int>(output.size())}, {output.begin(), output.end()});
    RuleChoice best{0, -2.0};
    for (int r = 0; r < table.dim(0); ++r) {
        const auto row = table.values().subspan(static_cast<std::size_t>(r) * output.size(), output.size());
        const Tensor tr({static_cast<int>(output.size())}, {row.begin(), row.end()});
        const double sim = ag::cosine_similarity(quiet, v, tr).item();
        if (sim > best.similarity) best = {r, sim};
    }
    return best;
}

ScoreVector score_candidates(Tape& t, const Tensor& panels, ConfigKind config, const Params& p, Mode mode,
                             const RuleAnnotation* annotation) {
    check_panels(panels, kPanelsPerInstance);
    ScoreVector sv;
    sv.active = active_modules(mode, config, annotation);
    if (sv.active.empty()) throw InvalidArgument("no active attribute modules");

    // Rows 0-1 are the context rows, rows 2-9 the third row completed by each candidate.
    std::array<std::array<int, 3>, 10> rows{};
    rows[0] = {0, 1, 2};
    rows[1] = {3, 4, 5};
    for (int k = 0; k < 8; ++k) rows[static_cast<std::size_t>(k) + 2] = {6, 7, 8 + k};

    Tensor features = encode(t, panels, p.enc1);
    sv.mp = relation_head(t, features, rows, p);

    std::vector<int> row_idx;
    for (const auto& r : rows) row_idx.insert(row_idx.end(), r.begin(), r.end());
    sv.mr = encode(t, stack_panels(t, panels, row_idx, 3), p.enc3);

    // Six-channel stacks: (row 2, row 3^k) for k = 0..7, (row 1, row 3^k), then (row 1, row 2).
    std::vector<int> pair_idx;
    auto push_pair = [&](std::size_t a, std::size_t b) {
        pair_idx.insert(pair_idx.end(), rows[a].begin(), rows[a].end());
        pair_idx.insert(pair_idx.end(), rows[b].begin(), rows[b].end());
    };
    for (std::size_t k = 0; k < 8; ++k) push_pair(1, k + 2);
    for (std::size_t k = 0; k < 8; ++k) push_pair(0, k + 2);
    push_pair(0, 1);
    sv.mo = encode(t, stack_panels(t, panels, pair_idx, 6), p.enc6);

    sv.e[0] = ag::add(t, ag::add(t, repeat_row(t, sv.mp, 0, 8), repeat_row(t, sv.mr, 0, 8)), row_range(t, sv.mo, 0, 8));
    sv.e[1] = ag::add(t, ag::add(t, repeat_row(t, sv.mp, 1, 8), repeat_row(t, sv.mr, 1, 8)), row_range(t, sv.mo, 8, 8));
    sv.e[2] = ag::add(t, ag::add(t, row_range(t, sv.mp, 2, 8), row_range(t, sv.mr, 2, 8)), repeat_row(t, sv.mo, 16, 8));

    const Tensor all_rows = ag::concat(t, sv.e, 0);  // [24 x d]
    const Transform tr = module_transform(t, all_rows, p, sv.active);
    for (int i = 0; i < 3; ++i) sv.tau[static_cast<std::size_t>(i)] = row_range(t, tr.tau, 8 * i, 8);
    for (const Tensor& out : tr.outputs) {
        sv.outputs.push_back({row_range(t, out, 0, 8), row_range(t, out, 8, 8), row_range(t, out, 16, 8)});
    }

    sv.base = ag::cosine_rows(t, sv.tau[2], ag::scale(t, ag::add(t, sv.tau[0], sv.tau[1]), 0.5));
    std::vector<Tensor> alignment;
    for (std::size_t j = 0; j < sv.active.size(); ++j) {
        const auto& out = sv.outputs[j];
        if (mode == Mode::Meta) {
            const Tensor target = repeat_row(t, p.rule_table, static_cast<int>(sv.active[j].target), 8);
            sv.rule_terms.push_back(ag::cosine_rows(t, out[2], target));
            alignment.push_back(ag::cosine_rows(t, out[0], target));
            alignment.push_back(ag::cosine_rows(t, out[1], target));
        } else {
            sv.rule_terms.push_back(ag::cosine_rows(t, out[2], ag::scale(t, ag::add(t, out[0], out[1]), 0.5)));
        }
        std::array<int, 8> chosen{};
        const auto dt = static_cast<std::size_t>(p.config.dt);
        for (std::size_t k = 0; k < 8; ++k) {
            chosen[k] = infer_rule(out[2].values().subspan(k * dt, dt), p.rule_table).index;
        }
        sv.selected_rules.push_back(chosen);
    }

    // s_k = sum over active modules of (base_k + rule_jk)
    Tensor s;
    for (const Tensor& rule : sv.rule_terms) {
        const Tensor term = ag::add(t, sv.base, rule);
        s = s.defined() ? ag::add(t, s, term) : term;
    }
    sv.s = s;

    if (!alignment.empty()) {
        Tensor cosines = ag::concat(t, alignment, 0);
        const Tensor mean_cos = ag::reduce_all(t, ReduceKind::Mean, cosines);
        sv.alignment = ag::sub(t, Tensor::scalar(1.0), mean_cos);
    }
    return sv;
}

int predict(std::span<const double> s) {
    if (s.empty()) throw BadIndex("no scores");
    return static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
}

Tensor loss(Tape& t, const Tensor& s, int y, double lambda) {
    if (lambda < 0.0) throw InvalidArgument("lambda must be non-negative");
    Tensor ce = ag::softmax_cross_entropy(t, s, y);
    if (lambda == 0.0) return ce;
    // sum_{i != y} s_i - s_y = sum_i s_i - 2 s_y
    const std::vector<int> yi{y};
    Tensor sy = ag::reshape(t, ag::gather_rows(t, s, yi), {});
    Tensor margin = ag::sub(t, ag::reduce_all(t, ReduceKind::Sum, s), ag::scale(t, sy, 2.0));
    return ag::add(t, ce, ag::scale(t, margin, lambda));
}

std::array<bool, kModuleCount> frozen_modules(std::span<const Example> batch) {
    std::array<bool, kModuleCount> frozen{};
    frozen.fill(true);
    for (const Example& ex : batch) {
        for (int c = 0; c < kMaxComponents; ++c) {
            for (Attribute a : kAllAttributes) {
                if (ex.meta.attribute(c, a)) frozen[static_cast<std::size_t>(module_index(c, a))] = false;
            }
        }
    }
    return frozen;
}

StepResult masked_train_step(std::span<const Example> batch, Params& params, ag::AdamState& state,
                             const TrainSettings& settings) {
    if (batch.empty()) throw InvalidArgument("empty batch");
    std::vector<Tensor> tensors = params.tensors();
    for (Tensor& x : tensors) x.zero_grad();

    StepResult result;
    const double weight = 1.0 / static_cast<double>(batch.size());
    int correct = 0;
    for (const Example& ex : batch) {
        Tape t;
        const Tensor panels = panels_tensor(ex.panels);
        const ScoreVector sv = score_candidates(t, panels, ex.config, params, settings.mode, ex.annotation);
        Tensor l = loss(t, sv.s, ex.label, settings.lambda);
        if (settings.mode == Mode::Meta && settings.mu != 0.0) {
            l = ag::add(t, l, ag::scale(t, sv.alignment, settings.mu));
        }
        result.loss += l.item() * weight;
        if (predict(sv.s.values()) == ex.label) ++correct;
        t.backward(ag::scale(t, l, weight));
    }
    result.accuracy = static_cast<double>(correct) / static_cast<double>(batch.size());

    auto update = std::make_unique<bool[]>(tensors.size());
    std::fill_n(update.get(), tensors.size(), true);
    if (settings.mode == Mode::Meta) {
        result.frozen = frozen_modules(batch);
        const std::vector<int> owner = params.module_of();
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            if (owner[i] >= 0 && result.frozen[static_cast<std::size_t>(owner[i])]) update[i] = false;
        }
    }
    ag::adam_step(tensors, state, std::span<const bool>(update.get(), tensors.size()));
    return result;
}

}  // namespace mmon::model
