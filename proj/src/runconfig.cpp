#include "posediff/runconfig.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

#include "posediff/errors.hpp"

namespace posediff {

namespace {

using nlohmann::json;

// Rejects keys outside the schema so a typo like "training.step" fails loudly
// instead of silently training with defaults.
void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known) throw FormatError("config: unknown key \"" + where + key + "\"");
    }
}

int get_int(const json& obj, const char* key, int fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number_integer()) throw FormatError("config: \"" + where + key + "\" must be an integer");
    return v.get<int>();
}

double get_double(const json& obj, const char* key, double fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number()) throw FormatError("config: \"" + where + key + "\" must be a number");
    return v.get<double>();
}

std::string get_string(const json& obj, const char* key, std::string fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_string()) throw FormatError("config: \"" + where + key + "\" must be a string");
    return v.get<std::string>();
}

json to_tree(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["model"] = {{"latent_dim", c.model.latent_dim}, {"blocks", c.model.blocks}, {"heads", c.model.heads}};
    j["schedule"] = {{"timesteps", c.timesteps}};
    j["training"] = {{"batch_size", c.training.batch_size},
                     {"steps", c.training.steps},
                     {"learning_rate", c.training.learning_rate},
                     {"cfg_dropout", c.training.cfg_dropout}};
    j["data"] = {{"size", c.data.size}, {"latent_rank", c.data.latent_rank}};
    j["paths"] = {{"corpus", c.paths.corpus}, {"checkpoint", c.paths.checkpoint}, {"output", c.paths.output}};
    return j;
}

RunConfig from_tree(const json& j) {
    if (!j.is_object()) throw FormatError("config: top level must be a JSON object");
    check_keys(j, {"seed", "model", "schedule", "training", "data", "paths"}, "");
    RunConfig c;

    if (j.contains("seed")) {
        const json& s = j.at("seed");
        if (!s.is_number_integer()) throw FormatError("config: \"seed\" must be an integer");
        if (s.is_number_integer() && !s.is_number_unsigned() && s.get<std::int64_t>() < 0)
            throw ValidationError("config: \"seed\" must be >= 0");
        c.seed = s.get<std::uint64_t>();
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        if (!m.is_object()) throw FormatError("config: \"model\" must be an object");
        check_keys(m, {"latent_dim", "blocks", "heads"}, "model.");
        c.model.latent_dim = get_int(m, "latent_dim", c.model.latent_dim, "model.");
        c.model.blocks = get_int(m, "blocks", c.model.blocks, "model.");
        c.model.heads = get_int(m, "heads", c.model.heads, "model.");
        if (c.model.latent_dim < 1 || c.model.blocks < 1 || c.model.heads < 1)
            throw ValidationError("config: model dimensions must be >= 1");
        if (c.model.latent_dim % c.model.heads != 0)
            throw ValidationError("config: model.latent_dim must be divisible by model.heads");
    }
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        if (!s.is_object()) throw FormatError("config: \"schedule\" must be an object");
        check_keys(s, {"timesteps"}, "schedule.");
        c.timesteps = get_int(s, "timesteps", c.timesteps, "schedule.");
        if (c.timesteps < 1) throw ValidationError("config: schedule.timesteps must be >= 1");
    }
    if (j.contains("training")) {
        const json& t = j.at("training");
        if (!t.is_object()) throw FormatError("config: \"training\" must be an object");
        check_keys(t, {"batch_size", "steps", "learning_rate", "cfg_dropout"}, "training.");
        c.training.batch_size = get_int(t, "batch_size", c.training.batch_size, "training.");
        c.training.steps = get_int(t, "steps", c.training.steps, "training.");
        c.training.learning_rate = get_double(t, "learning_rate", c.training.learning_rate, "training.");
        c.training.cfg_dropout = get_double(t, "cfg_dropout", c.training.cfg_dropout, "training.");
        if (c.training.batch_size < 1) throw ValidationError("config: training.batch_size must be >= 1");
        if (c.training.steps < 0) throw ValidationError("config: training.steps must be >= 0");
        if (!(c.training.learning_rate > 0.0) || !std::isfinite(c.training.learning_rate))
            throw ValidationError("config: training.learning_rate must be finite and > 0");
        if (!(c.training.cfg_dropout >= 0.0 && c.training.cfg_dropout <= 1.0))
            throw ValidationError("config: training.cfg_dropout must lie in [0, 1]");
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        if (!d.is_object()) throw FormatError("config: \"data\" must be an object");
        check_keys(d, {"size", "latent_rank"}, "data.");
        c.data.size = get_int(d, "size", c.data.size, "data.");
        c.data.latent_rank = get_int(d, "latent_rank", c.data.latent_rank, "data.");
        if (c.data.size < 1) throw ValidationError("config: data.size must be >= 1");
        if (c.data.latent_rank < 1 || c.data.latent_rank > 8)
            throw ValidationError("config: data.latent_rank must lie in [1, 8]");
    }
    if (j.contains("paths")) {
        const json& p = j.at("paths");
        if (!p.is_object()) throw FormatError("config: \"paths\" must be an object");
        check_keys(p, {"corpus", "checkpoint", "output"}, "paths.");
        c.paths.corpus = get_string(p, "corpus", c.paths.corpus, "paths.");
        c.paths.checkpoint = get_string(p, "checkpoint", c.paths.checkpoint, "paths.");
        c.paths.output = get_string(p, "output", c.paths.output, "paths.");
        if (c.paths.corpus.empty() || c.paths.checkpoint.empty() || c.paths.output.empty())
            throw ValidationError("config: paths must be non-empty");
    }
    // The run seed drives training; TrainConfig's own field never comes from
    // the file.
    c.training.seed = c.seed;
    return c;
}

// Line/column of a 1-based byte offset, for parse diagnostics.
std::pair<int, int> line_column(const std::string& text, size_t byte) {
    int line = 1, column = 1;
    for (size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            column = 1;
        } else {
            ++column;
        }
    }
    return {line, column};
}

json parse_document(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, column] = line_column(text, e.byte);
        throw FormatError("config: parse error at line " + std::to_string(line) + ", column " +
                          std::to_string(column));
    }
}

}  // namespace

std::string config_to_json(const RunConfig& config) { return to_tree(config).dump(2) + "\n"; }

RunConfig config_from_json(const std::string& text) { return from_tree(parse_document(text)); }

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("load_config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return config_from_json(buf.str());
    } catch (const FormatError& e) {
        throw FormatError(std::string(e.what()) + " in " + path);
    }
}

RunConfig apply_overrides(const RunConfig& base,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
    json doc = to_tree(base);
    for (const auto& [path, value] : overrides) {
        json* node = &doc;
        std::string walked;
        size_t begin = 0;
        while (true) {
            const size_t dot = path.find('.', begin);
            const std::string part = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
            if (part.empty()) throw FormatError("config: malformed override key \"" + path + "\"");
            if (!node->is_object() || !node->contains(part))
                throw FormatError("config: unknown override key \"" + path + "\"");
            node = &node->at(part);
            walked += part;
            if (dot == std::string::npos) break;
            walked += '.';
            begin = dot + 1;
        }
        if (node->is_object() || node->is_array())
            throw FormatError("config: \"" + path + "\" is a group, not a setting");
        json parsed;
        bool scalar = false;
        try {
            parsed = json::parse(value);
            scalar = parsed.is_number() || parsed.is_boolean();
        } catch (const json::parse_error&) {
            scalar = false;
        }
        if (node->is_string()) {
            *node = value;  // paths stay verbatim, even when they look numeric
        } else if (scalar) {
            *node = parsed;
        } else {
            throw FormatError("config: override for \"" + path + "\" must be a number, got \"" + value + "\"");
        }
    }
    return from_tree(doc);
}

std::string config_hash(const RunConfig& config) {
    const std::string canon = to_tree(config).dump();
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64 offset basis
    for (const unsigned char c : canon) {
        h ^= c;
        h *= 1099511628211ull;
    }
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = hex[h & 0xf];
        h >>= 4;
    }
    return out;
}

}  // namespace posediff
