#include "matchnet/models.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "matchnet/errors.hpp"

namespace matchnet {

namespace {

constexpr std::array<std::pair<Family, std::string_view>, 5> kFamilyNames = {{
    {Family::Mlp, "MLP"},
    {Family::SMlp, "S-MLP"},
    {Family::STcn, "S-TCN"},
    {Family::MatchNet, "MATCH-NET"},
    {Family::MatchNetPlus, "MATCH-NET-PLUS"},
}};

Tensor dense(const Tensor& x, const Parameter& w, const Parameter& b) {
    return add_row(matmul(x, w.tensor), b.tensor);
}

} // namespace

std::string_view family_name(Family family) {
    for (const auto& [f, name] : kFamilyNames) {
        if (f == family) {
            return name;
        }
    }
    return "?";
}

std::optional<Family> parse_family(std::string_view name) {
    std::string upper(name);
    std::transform(upper.begin(), upper.end(), upper.begin(),
                   [](unsigned char c) { return c == '_' ? '-' : static_cast<char>(std::toupper(c)); });
    for (const auto& [f, n] : kFamilyNames) {
        if (upper == n) {
            return f;
        }
    }
    if (upper == "MATCHNET") {
        return Family::MatchNet;
    }
    if (upper == "MATCHNET+" || upper == "MATCH-NET+" || upper == "MATCHNET-PLUS") {
        return Family::MatchNetPlus;
    }
    return std::nullopt;
}

std::size_t ModelSpec::conv_output_steps() const {
    if (!is_convolutional()) {
        return window_steps;
    }
    const std::size_t shrink = conv_layers * (filter_width - 1);
    return window_steps > shrink ? window_steps - shrink : 0;
}

void ModelSpec::validate() const {
    const std::string name(family_name(family));
    if (window_steps == 0 || horizon_steps == 0) {
        throw SpecError(name + ": window and horizon must be at least one step");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw SpecError(name + ": dropout rate must lie in [0, 1)");
    }
    if (fc_layers > 0 && fc_width == 0) {
        throw SpecError(name + ": dense layers need a positive width");
    }
    if (family == Family::Mlp && window_steps != 1) {
        throw SpecError("MLP consumes a single time slice; window must be 1 step");
    }
    if (is_convolutional()) {
        if (conv_layers == 0 || filter_width == 0 || filters_main == 0) {
            throw SpecError(name + ": convolutional families need layers, filters and width >= 1");
        }
        if (conv_output_steps() == 0) {
            throw SpecError(name + ": " + std::to_string(conv_layers) + " conv layers of width " +
                            std::to_string(filter_width) + " do not fit a window of " +
                            std::to_string(window_steps) + " steps");
        }
    }
    if (use_mask_stream() && (filters_mask == 0 || filters_mask >= filters_main)) {
        throw SpecError(name + ": mask branch needs fewer filters than the main branch (" +
                        std::to_string(filters_mask) + " >= " + std::to_string(filters_main) + ")");
    }
}

// ---------------------------------------------------------------------------

Batch make_batch(std::span<const WindowInstance* const> items) {
    if (items.empty()) {
        throw ContractError("make_batch: empty batch");
    }
    const std::size_t f = items[0]->x.rows;
    const std::size_t w = items[0]->x.cols;
    const std::size_t d = kDiagnosisDim;
    std::vector<double> x, z, r(items.size() * d, 0.0);
    x.reserve(items.size() * f * w);
    z.reserve(items.size() * f * w);
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& inst = *items[i];
        if (inst.x.rows != f || inst.x.cols != w || inst.z.rows != f || inst.z.cols != w) {
            throw DimensionError("make_batch: instance " + std::to_string(i) + " has window " +
                                 std::to_string(inst.x.rows) + "x" + std::to_string(inst.x.cols) +
                                 ", batch expects " + std::to_string(f) + "x" + std::to_string(w));
        }
        x.insert(x.end(), inst.x.data.begin(), inst.x.data.end());
        z.insert(z.end(), inst.z.data.begin(), inst.z.data.end());
        std::copy_n(inst.r.begin(), std::min(inst.r.size(), d), r.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    Batch b;
    b.size = items.size();
    b.x = Tensor({b.size, f, w}, std::move(x));
    b.z = Tensor({b.size, f, w}, std::move(z));
    b.r = Tensor({b.size, d}, std::move(r));
    return b;
}

Batch make_batch(std::span<const WindowInstance> items) {
    std::vector<const WindowInstance*> ptrs;
    ptrs.reserve(items.size());
    for (const auto& i : items) {
        ptrs.push_back(&i);
    }
    return make_batch(ptrs);
}

// ---------------------------------------------------------------------------

std::size_t Model::add_param(std::string name, Shape shape, bool is_weight, std::size_t fan_in, Rng& rng) {
    const std::size_t n = shape_size(shape);
    std::vector<double> values(n, 0.0);
    if (is_weight) {
        const double limit = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
        for (auto& v : values) {
            v = uniform(rng, -limit, limit);
        }
    }
    params_.push_back({std::move(name), Tensor(std::move(shape), std::move(values), true), is_weight});
    return params_.size() - 1;
}

Model Model::build(const ModelSpec& spec, std::size_t num_features, std::size_t diag_dim,
                   std::uint64_t seed) {
    spec.validate();
    if (num_features == 0) {
        throw SpecError("model needs at least one input feature");
    }
    Model m;
    m.spec_ = spec;
    m.num_features_ = num_features;
    m.diag_dim_ = diag_dim;
    Rng rng(seed);

    std::size_t flat = 0;
    if (spec.is_convolutional()) {
        const std::size_t L = spec.filter_width;
        const bool mask = spec.use_mask_stream();
        std::size_t main_in = num_features;
        std::size_t mask_in = num_features;
        for (std::size_t i = 0; i < spec.conv_layers; ++i) {
            const auto tag = std::to_string(i);
            m.conv_main_.push_back(
                {m.add_param("conv_main." + tag + ".kernel", {spec.filters_main, main_in, L}, true, main_in * L, rng),
                 m.add_param("conv_main." + tag + ".bias", {spec.filters_main}, false, 0, rng)});
            if (mask) {
                m.conv_mask_.push_back(
                    {m.add_param("conv_mask." + tag + ".kernel", {spec.filters_mask, mask_in, L}, true, mask_in * L, rng),
                     m.add_param("conv_mask." + tag + ".bias", {spec.filters_mask}, false, 0, rng)});
                mask_in = spec.filters_mask;
            }
            main_in = spec.filters_main + (mask ? spec.filters_mask : 0);
        }
        flat = main_in * spec.conv_output_steps();
    } else {
        flat = num_features * spec.window_steps;
    }
    if (spec.use_diagnosis()) {
        flat += diag_dim;
    }

    std::size_t width = flat;
    for (std::size_t i = 0; i < spec.fc_layers; ++i) {
        const auto tag = std::to_string(i);
        m.dense_.push_back({m.add_param("dense." + tag + ".weight", {width, spec.fc_width}, true, width, rng),
                            m.add_param("dense." + tag + ".bias", {spec.fc_width}, false, 0, rng)});
        width = spec.fc_width;
    }
    m.head_ = {m.add_param("head.weight", {width, spec.horizon_steps}, true, width, rng),
               m.add_param("head.bias", {spec.horizon_steps}, false, 0, rng)};
    if (spec.anchor_head) {
        m.anchor_head_ = Affine{m.add_param("anchor_head.weight", {width, 1}, true, width, rng),
                                m.add_param("anchor_head.bias", {1}, false, 0, rng)};
    }
    return m;
}

Model::Model(const Model& other)
    : spec_(other.spec_),
      num_features_(other.num_features_),
      diag_dim_(other.diag_dim_),
      conv_main_(other.conv_main_),
      conv_mask_(other.conv_mask_),
      dense_(other.dense_),
      head_(other.head_),
      anchor_head_(other.anchor_head_) {
    params_.reserve(other.params_.size());
    for (const auto& p : other.params_) {
        Tensor t = p.tensor.detach();
        t.set_requires_grad(true);
        params_.push_back({p.name, std::move(t), p.is_weight});
    }
}

Model& Model::operator=(const Model& other) {
    if (this != &other) {
        Model copy(other);
        *this = std::move(copy);
    }
    return *this;
}

Parameter& Model::parameter(std::string_view name) {
    for (auto& p : params_) {
        if (p.name == name) {
            return p;
        }
    }
    throw ContractError("model has no parameter '" + std::string(name) + "'");
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.tensor.size();
    }
    return n;
}

void Model::load_parameter_values(const Model& other) {
    if (other.params_.size() != params_.size()) {
        throw ContractError("load_parameter_values: parameter layouts differ");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].tensor.shape() != other.params_[i].tensor.shape()) {
            throw ContractError("load_parameter_values: shape mismatch for '" + params_[i].name + "'");
        }
        const auto src = other.params_[i].tensor.values();
        std::copy(src.begin(), src.end(), params_[i].tensor.mutable_values().begin());
    }
}

Model::Output Model::forward(const Batch& batch, bool training, Rng* rng) const {
    const Shape expected{batch.size, num_features_, spec_.window_steps};
    if (batch.x.shape() != expected || batch.z.shape() != expected) {
        throw DimensionError("forward: expected window " + shape_to_string(expected) + ", got x " +
                             shape_to_string(batch.x.shape()) + " and z " + shape_to_string(batch.z.shape()));
    }
    if (spec_.use_diagnosis() && batch.r.shape() != Shape{batch.size, diag_dim_}) {
        throw DimensionError("forward: expected diagnosis " + shape_to_string({batch.size, diag_dim_}) +
                             ", got " + shape_to_string(batch.r.shape()));
    }
    const bool stochastic = training && spec_.dropout > 0.0;
    if (stochastic && rng == nullptr) {
        throw ContractError("forward: training with dropout needs an rng");
    }

    Tensor h;
    if (spec_.is_convolutional()) {
        Tensor main = batch.x;
        Tensor aux = batch.z;
        for (std::size_t i = 0; i < conv_main_.size(); ++i) {
            Tensor m = relu(conv1d_temporal(main, params_[conv_main_[i].weight].tensor,
                                            params_[conv_main_[i].bias].tensor));
            if (spec_.use_mask_stream()) {
                aux = relu(conv1d_temporal(aux, params_[conv_mask_[i].weight].tensor,
                                           params_[conv_mask_[i].bias].tensor));
                main = concat({m, aux}, 1);
            } else {
                main = m;
            }
        }
        h = reshape(main, {batch.size, main.size() / batch.size});
    } else {
        h = reshape(batch.x, {batch.size, num_features_ * spec_.window_steps});
    }
    if (spec_.use_diagnosis()) {
        h = concat({h, batch.r}, 1);
    }

    Rng unused(0);
    Rng& dropout_rng = rng ? *rng : unused;
    for (const auto& layer : dense_) {
        h = relu(dense(h, params_[layer.weight], params_[layer.bias]));
        h = dropout(h, spec_.dropout, dropout_rng, stochastic);
    }
    Output out{sigmoid(dense(h, params_[head_.weight], params_[head_.bias])), std::nullopt};
    if (anchor_head_) {
        out.anchor_probabilities = sigmoid(dense(h, params_[anchor_head_->weight], params_[anchor_head_->bias]));
    }
    return out;
}

std::vector<double> Model::predict(const WindowInstance& instance) const {
    const WindowInstance* one = &instance;
    const auto out = forward(make_batch(std::span<const WindowInstance* const>(&one, 1)), false, nullptr);
    const auto v = out.probabilities.values();
    return {v.begin(), v.end()};
}

std::vector<std::vector<double>> Model::predict(std::span<const WindowInstance> instances,
                                                std::size_t batch_size) const {
    std::vector<std::vector<double>> out;
    out.reserve(instances.size());
    const std::size_t K = spec_.horizon_steps;
    for (std::size_t start = 0; start < instances.size(); start += batch_size) {
        const auto chunk = instances.subspan(start, std::min(batch_size, instances.size() - start));
        const auto fwd = forward(make_batch(chunk), false, nullptr);
        const auto probs = fwd.probabilities.values();
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            out.emplace_back(probs.begin() + static_cast<std::ptrdiff_t>(i * K),
                             probs.begin() + static_cast<std::ptrdiff_t>((i + 1) * K));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

void write_model_spec(BinaryWriter& out, const ModelSpec& spec) {
    out.str(family_name(spec.family));
    for (std::size_t v : {spec.window_steps, spec.horizon_steps, spec.conv_layers, spec.filters_main,
                          spec.filters_mask, spec.filter_width, spec.fc_layers, spec.fc_width}) {
        out.u64(v);
    }
    out.f64(spec.dropout);
    out.u8(spec.anchor_head ? 1 : 0);
}

ModelSpec read_model_spec(BinaryReader& in) {
    ModelSpec spec;
    const auto name = in.str();
    const auto family = parse_family(name);
    if (!family) {
        throw FormatError("unknown model family '" + name + "'");
    }
    spec.family = *family;
    for (std::size_t* v : {&spec.window_steps, &spec.horizon_steps, &spec.conv_layers, &spec.filters_main,
                           &spec.filters_mask, &spec.filter_width, &spec.fc_layers, &spec.fc_width}) {
        *v = in.u64();
    }
    spec.dropout = in.f64();
    spec.anchor_head = in.u8() != 0;
    return spec;
}

namespace {

void write_strings(BinaryWriter& out, const std::vector<std::string>& v) {
    out.u64(v.size());
    for (const auto& s : v) {
        out.str(s);
    }
}

std::vector<std::string> read_strings(BinaryReader& in) {
    const auto n = in.u64();
    if (n > in.remaining() / 8) {
        throw FormatError("truncated input: string list of " + std::to_string(n));
    }
    std::vector<std::string> v;
    v.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        v.push_back(in.str());
    }
    return v;
}

} // namespace

void write_norm_stats(BinaryWriter& out, const NormStats& stats) {
    write_strings(out, stats.numeric_names);
    out.f64s(stats.means);
    out.f64s(stats.sds);
    write_strings(out, stats.categorical_names);
    for (const auto& c : stats.categories) {
        write_strings(out, c);
    }
}

NormStats read_norm_stats(BinaryReader& in) {
    NormStats s;
    s.numeric_names = read_strings(in);
    s.means = in.f64s();
    s.sds = in.f64s();
    s.categorical_names = read_strings(in);
    for (std::size_t i = 0; i < s.categorical_names.size(); ++i) {
        s.categories.push_back(read_strings(in));
    }
    if (s.means.size() != s.numeric_names.size() || s.sds.size() != s.numeric_names.size()) {
        throw FormatError("normalization statistics are inconsistent");
    }
    return s;
}

void write_schema(BinaryWriter& out, const FeatureSchema& schema) {
    write_strings(out, schema.longitudinal);
    write_strings(out, schema.static_numeric);
    write_strings(out, schema.static_categorical);
}

FeatureSchema read_schema(BinaryReader& in) {
    FeatureSchema s;
    s.longitudinal = read_strings(in);
    s.static_numeric = read_strings(in);
    s.static_categorical = read_strings(in);
    return s;
}

std::string serialize(const Checkpoint& ckpt) {
    BinaryWriter out;
    out.raw(kCheckpointMagic);
    out.u32(kCheckpointVersion);
    write_model_spec(out, ckpt.model.spec());
    out.u64(ckpt.model.num_features());
    out.u64(ckpt.model.diag_dim());
    write_schema(out, ckpt.schema);
    write_norm_stats(out, ckpt.norm_stats);
    out.f64(ckpt.delta);
    out.u8(ckpt.differenced ? 1 : 0);
    const auto params = ckpt.model.parameters();
    out.u64(params.size());
    for (const auto& p : params) {
        out.str(p.name);
        out.f64s(p.tensor.values());
    }
    return out.take();
}

Checkpoint deserialize(std::string_view bytes) {
    BinaryReader in(bytes);
    if (in.remaining() < kCheckpointMagic.size() || in.raw(kCheckpointMagic.size()) != kCheckpointMagic) {
        throw FormatError("not a checkpoint file (bad magic)");
    }
    const auto version = in.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    const ModelSpec spec = read_model_spec(in);
    const auto num_features = in.u64();
    const auto diag_dim = in.u64();
    FeatureSchema schema = read_schema(in);
    NormStats stats = read_norm_stats(in);
    const double delta = in.f64();
    const bool differenced = in.u8() != 0;

    Model model = [&] {
        try {
            return Model::build(spec, num_features, diag_dim, 0);
        } catch (const SpecError& e) {
            throw FormatError(std::string("checkpoint holds an invalid model spec: ") + e.what());
        }
    }();
    const auto n = in.u64();
    if (n != model.parameters().size()) {
        throw FormatError("checkpoint has " + std::to_string(n) + " parameter blobs, model needs " +
                          std::to_string(model.parameters().size()));
    }
    for (auto& p : model.parameters()) {
        const auto name = in.str();
        auto values = in.f64s();
        if (name != p.name || values.size() != p.tensor.size()) {
            throw FormatError("checkpoint parameter '" + name + "' does not match layout '" + p.name + "'");
        }
        std::copy(values.begin(), values.end(), p.tensor.mutable_values().begin());
    }
    if (!in.at_end()) {
        throw FormatError("trailing bytes after checkpoint");
    }
    return Checkpoint{std::move(model), std::move(schema), std::move(stats), delta, differenced};
}

} // namespace matchnet
