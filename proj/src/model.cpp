#include "posediff/model.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>

#include "posediff/errors.hpp"
#include "posediff/skeleton.hpp"

namespace posediff {

int DenoiserConfig::head_dim() const {
    if (latent_dim <= 0 || blocks <= 0 || heads <= 0)
        throw ValidationError("DenoiserConfig: dimensions must be positive");
    if (latent_dim % heads != 0) throw ValidationError("DenoiserConfig: heads must divide latent_dim");
    return latent_dim / heads;
}

int ParamStore::add(std::string name, Tensor init) {
    if (index_.count(name)) throw ValidationError("ParamStore: duplicate parameter name " + name);
    const int id = count();
    index_[name] = id;
    grads_.push_back(Tensor::zeros(init.shape()));
    values_.push_back(std::move(init));
    names_.push_back(std::move(name));
    return id;
}

std::int64_t ParamStore::scalar_count() const {
    std::int64_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
}

int ParamStore::index_of(const std::string& name) const {
    const auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
}

Tensor& ParamStore::value(const std::string& name) {
    const int i = index_of(name);
    if (i < 0) throw ValidationError("ParamStore: unknown parameter " + name);
    return values_[static_cast<size_t>(i)];
}

const Tensor& ParamStore::value(const std::string& name) const {
    return const_cast<ParamStore*>(this)->value(name);
}

void ParamStore::zero_grads() {
    for (auto& g : grads_)
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] = 0.0;
}

namespace {

// Registers the full parameter set in a fixed order shared by zero and
// random construction.
void register_params(ParamStore& s, const DenoiserConfig& c) {
    const int D = c.latent_dim;
    const int H = c.heads;
    const int hid = DenoiserConfig::kPhiHidden;

    s.add("embed.proj.w", Tensor({6, D}));
    s.add("embed.proj.b", Tensor({D}));
    s.add("embed.pos", Tensor({kJointCount, D}));
    s.add("embed.group", Tensor({KinematicTree::kGroupCount, D}));
    s.add("time.w1", Tensor({D, D}));
    s.add("time.b1", Tensor({D}));
    s.add("time.w2", Tensor({D, D}));
    s.add("time.b2", Tensor({D}));

    for (int b = 0; b < c.blocks; ++b) {
        const std::string p = "blk" + std::to_string(b) + ".";
        s.add(p + "ln1.g", Tensor({D}));
        s.add(p + "ln1.b", Tensor({D}));
        for (const char* w : {"wq", "wk", "wv", "wo"}) s.add(p + "attn." + w, Tensor({D, D}));
        for (const char* bn : {"bq", "bk", "bv", "bo"}) s.add(p + "attn." + bn, Tensor({D}));
        s.add(p + "phi.w1", Tensor({1, hid}));
        s.add(p + "phi.b1", Tensor({hid}));
        s.add(p + "phi.w2", Tensor({hid, H}));
        s.add(p + "phi.b2", Tensor({H}));
        s.add(p + "ln2.g", Tensor({D}));
        s.add(p + "ln2.b", Tensor({D}));
        for (const char* w : {"wq", "wk", "wv", "wo"}) s.add(p + "cross." + w, Tensor({D, D}));
        for (const char* bn : {"bq", "bk", "bv", "bo"}) s.add(p + "cross." + bn, Tensor({D}));
        s.add(p + "ln3.g", Tensor({D}));
        s.add(p + "ln3.b", Tensor({D}));
        s.add(p + "mlp.w1", Tensor({D, c.mlp_dim()}));
        s.add(p + "mlp.b1", Tensor({c.mlp_dim()}));
        s.add(p + "mlp.w2", Tensor({c.mlp_dim(), D}));
        s.add(p + "mlp.b2", Tensor({D}));
    }
    s.add("final.ln.g", Tensor({D}));
    s.add("final.ln.b", Tensor({D}));
    s.add("head.w", Tensor({D, 6}));
    s.add("head.b", Tensor({6}));

    s.add("cond.text.table", Tensor({DenoiserConfig::kVocab, D}));
    s.add("cond.img.w1", Tensor({DenoiserConfig::kImageFeatureDim, D}));
    s.add("cond.img.b1", Tensor({D}));
    s.add("cond.img.w2", Tensor({D, D}));
    s.add("cond.img.b2", Tensor({D}));
    s.add("cond.type.text", Tensor({D}));
    s.add("cond.type.img", Tensor({D}));
    s.add("cond.cls", Tensor({D}));
    s.add("cond.null", Tensor({D}));
    for (int b = 0; b < DenoiserConfig::kFusionBlocks; ++b) {
        const std::string p = "fuse" + std::to_string(b) + ".";
        s.add(p + "ln1.g", Tensor({D}));
        s.add(p + "ln1.b", Tensor({D}));
        for (const char* w : {"wq", "wk", "wv", "wo"}) s.add(p + "attn." + w, Tensor({D, D}));
        for (const char* bn : {"bq", "bk", "bv", "bo"}) s.add(p + "attn." + bn, Tensor({D}));
        s.add(p + "ln2.g", Tensor({D}));
        s.add(p + "ln2.b", Tensor({D}));
        s.add(p + "mlp.w1", Tensor({D, c.mlp_dim()}));
        s.add(p + "mlp.b1", Tensor({c.mlp_dim()}));
        s.add(p + "mlp.w2", Tensor({c.mlp_dim(), D}));
        s.add(p + "mlp.b2", Tensor({D}));
    }
    s.add("cond.out.w", Tensor({D, D}));
    s.add("cond.out.b", Tensor({D}));
    s.add("cond.queries", Tensor({DenoiserConfig::kContextTokens, D}));
}

bool is_layer_norm_gain(const std::string& name) {
    // Every layer-norm gain (and nothing else) ends in ".g".
    return name.size() >= 2 && name.compare(name.size() - 2, 2, ".g") == 0;
}

bool is_embedding(const std::string& name) {
    return name == "embed.pos" || name == "embed.group" || name == "cond.text.table" ||
           name == "cond.type.text" || name == "cond.type.img" || name == "cond.cls" || name == "cond.null" ||
           name == "cond.queries";
}

}  // namespace

ModelParams build_model(const DenoiserConfig& config) {
    config.head_dim();  // validate
    ModelParams m;
    m.config = config;
    register_params(m.store, config);
    return m;
}

ModelParams init_model(const DenoiserConfig& config, RngStream& stream) {
    ModelParams m = build_model(config);
    for (int i = 0; i < m.store.count(); ++i) {
        const std::string& name = m.store.name(i);
        Tensor& v = m.store.value(i);
        if (is_layer_norm_gain(name)) {
            for (std::int64_t k = 0; k < v.size(); ++k) v[k] = 1.0;
        } else if (is_embedding(name)) {
            for (std::int64_t k = 0; k < v.size(); ++k) v[k] = 0.02 * stream.next_gauss();
        } else if (v.rank() == 2) {
            // Linear weight: fan-in scaled.
            const double scale = 1.0 / std::sqrt(static_cast<double>(v.rows()));
            for (std::int64_t k = 0; k < v.size(); ++k) v[k] = scale * stream.next_gauss();
        }
        // Biases and layer-norm shifts stay zero.
    }
    return m;
}

TapeParams::TapeParams(Tape& tape, const ModelParams& model) : model_(&model) {
    vars_.reserve(static_cast<size_t>(model.store.count()));
    for (int i = 0; i < model.store.count(); ++i) vars_.push_back(tape.input(model.store.value(i)));
}

Var TapeParams::operator[](const std::string& name) const {
    const int i = model_->store.index_of(name);
    if (i < 0) throw ValidationError("TapeParams: unknown parameter " + name);
    return vars_[static_cast<size_t>(i)];
}

// ---------------------------------------------------------------------------
// checkpoint i/o
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void write_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw FormatError("checkpoint: truncated file");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, 4);
    write_u32(os, kVersion);

    nlohmann::json cfg;
    cfg["latent_dim"] = model.config.latent_dim;
    cfg["blocks"] = model.config.blocks;
    cfg["heads"] = model.config.heads;
    const std::string cfg_text = cfg.dump();
    write_u32(os, static_cast<std::uint32_t>(cfg_text.size()));
    os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

    write_u32(os, static_cast<std::uint32_t>(model.store.count()));
    for (int i = 0; i < model.store.count(); ++i) {
        const std::string& name = model.store.name(i);
        const Tensor& v = model.store.value(i);
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<std::uint32_t>(v.rank()));
        for (int d = 0; d < v.rank(); ++d) write_u32(os, static_cast<std::uint32_t>(v.dim(d)));
        for (std::int64_t k = 0; k < v.size(); ++k) write_f64(os, v[k]);
    }
    if (!os) throw FormatError("checkpoint: write failure on " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("checkpoint: bad magic, not a PDCK file");
    const std::uint32_t version = read_u32(is);
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));

    const std::uint32_t cfg_len = read_u32(is);
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), cfg_len);
    if (!is) throw FormatError("checkpoint: truncated config block");
    DenoiserConfig config;
    try {
        const auto cfg = nlohmann::json::parse(cfg_text);
        config.latent_dim = cfg.at("latent_dim").get<int>();
        config.blocks = cfg.at("blocks").get<int>();
        config.heads = cfg.at("heads").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad config block: ") + e.what());
    }

    ModelParams m = build_model(config);
    std::vector<bool> seen(static_cast<size_t>(m.store.count()), false);
    const std::uint32_t n_records = read_u32(is);
    if (n_records != static_cast<std::uint32_t>(m.store.count()))
        throw FormatError("checkpoint: expected " + std::to_string(m.store.count()) + " records, found " +
                          std::to_string(n_records));
    for (std::uint32_t r = 0; r < n_records; ++r) {
        const std::uint32_t name_len = read_u32(is);
        if (name_len > 4096) throw FormatError("checkpoint: implausible record name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw FormatError("checkpoint: truncated record name");
        const int idx = m.store.index_of(name);
        if (idx < 0) throw FormatError("checkpoint: unknown record " + name);
        if (seen[static_cast<size_t>(idx)]) throw FormatError("checkpoint: duplicate record " + name);
        seen[static_cast<size_t>(idx)] = true;
        Tensor& v = m.store.value(idx);
        const std::uint32_t rank = read_u32(is);
        if (static_cast<int>(rank) != v.rank()) throw FormatError("checkpoint: rank mismatch for " + name);
        for (int d = 0; d < v.rank(); ++d)
            if (read_u32(is) != static_cast<std::uint32_t>(v.dim(d)))
                throw FormatError("checkpoint: shape mismatch for " + name);
        for (std::int64_t k = 0; k < v.size(); ++k) v[k] = read_f64(is);
    }
    return m;
}

}  // namespace posediff
