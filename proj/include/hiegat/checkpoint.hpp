#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hiegat/model.hpp"

namespace hiegat {

class CheckpointError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char* checkpoint_format_tag = "HIEGAT-CHECKPOINT 1";

namespace detail {

inline std::string exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

inline double parse_exact(const std::string& s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw CheckpointError("bad number '" + s + "'");
    return v;
}

}  // namespace detail

/// Model configuration as ordered key/value pairs. Doubles are written in hex
/// so they round-trip exactly.
inline std::map<std::string, std::string> config_to_pairs(const HieGnnConfig& c) {
    std::map<std::string, std::string> kv;
    kv["embedding_width"] = std::to_string(c.embedding_width);
    kv["vocab_size"] = std::to_string(c.vocab_size);
    kv["class_count"] = std::to_string(c.class_count);
    for (auto [name, l] : {std::pair{"word", c.word}, std::pair{"sen", c.sen}, std::pair{"doc", c.doc}}) {
        kv[std::string(name) + "_layers"] = std::to_string(l.layers);
        kv[std::string(name) + "_heads"] = std::to_string(l.heads);
        kv[std::string(name) + "_window"] = std::to_string(l.window);
    }
    kv["readout"] = to_string(c.readout);
    kv["dropout"] = detail::exact(c.dropout);
    kv["negative_slope"] = detail::exact(c.negative_slope);
    kv["embedding_init"] = detail::exact(c.embedding_init);
    kv["lambda_policy"] = to_string(c.lambda_policy);
    kv["seed"] = std::to_string(c.seed);
    return kv;
}

inline HieGnnConfig config_from_pairs(const std::map<std::string, std::string>& kv) {
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw CheckpointError("checkpoint config is missing '" + key + "'");
        return it->second;
    };
    auto size = [&](const std::string& key) { return static_cast<std::size_t>(std::stoull(get(key))); };
    HieGnnConfig c;
    c.embedding_width = size("embedding_width");
    c.vocab_size = size("vocab_size");
    c.class_count = size("class_count");
    c.word = {size("word_layers"), size("word_heads"), size("word_window")};
    c.sen = {size("sen_layers"), size("sen_heads"), size("sen_window")};
    c.doc = {size("doc_layers"), size("doc_heads"), size("doc_window")};
    auto readout = parse_readout_mode(get("readout"));
    auto policy = parse_lambda_policy(get("lambda_policy"));
    if (!readout || !policy) throw CheckpointError("checkpoint config has an unknown readout or lambda policy");
    c.readout = *readout;
    c.lambda_policy = *policy;
    c.dropout = detail::parse_exact(get("dropout"));
    c.negative_slope = detail::parse_exact(get("negative_slope"));
    c.embedding_init = detail::parse_exact(get("embedding_init"));
    c.seed = std::stoull(get("seed"));
    return c;
}

/// Text container: format tag, `config key value` lines, then for each
/// parameter a `param name d0 d1 ...` header followed by one line of hex values.
inline void save_checkpoint(HieGnnModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out << checkpoint_format_tag << '\n';
    for (const auto& [k, v] : config_to_pairs(model.config())) out << "config " << k << ' ' << v << '\n';
    model.for_each_parameter([&](const std::string& name, Tensor& t) {
        out << "param " << name;
        for (auto d : t.shape()) out << ' ' << d;
        out << '\n';
        const auto data = t.data();
        for (std::size_t i = 0; i < data.size(); ++i) out << (i ? " " : "") << detail::exact(data[i]);
        out << '\n';
    });
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

/// Rebuilds the model from the stored config and fills every parameter; any
/// missing, extra, or mis-shaped tensor is an error.
inline HieGnnModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != checkpoint_format_tag) {
        throw CheckpointError(path.string() + ": not a checkpoint (expected '" + checkpoint_format_tag + "')");
    }
    std::map<std::string, std::string> kv;
    struct Stored {
        Shape shape;
        std::vector<double> values;
    };
    std::map<std::string, Stored> stored;
    while (std::getline(in, line)) {
        std::istringstream is(line);
        std::string kind;
        is >> kind;
        if (kind == "config") {
            std::string k, v;
            is >> k >> v;
            kv[k] = v;
        } else if (kind == "param") {
            std::string name;
            is >> name;
            Stored s;
            std::size_t d;
            while (is >> d) s.shape.push_back(d);
            std::string values;
            if (!std::getline(in, values)) throw CheckpointError("truncated checkpoint at parameter " + name);
            std::istringstream vs(values);
            std::string tok;
            while (vs >> tok) s.values.push_back(detail::parse_exact(tok));
            if (s.values.size() != numel(s.shape)) {
                throw CheckpointError("parameter " + name + " has " + std::to_string(s.values.size()) +
                                      " values for shape " + shape_str(s.shape));
            }
            stored.emplace(name, std::move(s));
        } else if (!kind.empty()) {
            throw CheckpointError("unexpected checkpoint line '" + line + "'");
        }
    }
    HieGnnModel model(config_from_pairs(kv));
    std::size_t matched = 0;
    model.for_each_parameter([&](const std::string& name, Tensor& t) {
        auto it = stored.find(name);
        if (it == stored.end()) throw CheckpointError("checkpoint is missing parameter " + name);
        if (it->second.shape != t.shape()) {
            throw CheckpointError("shape mismatch for " + name + ": checkpoint " + shape_str(it->second.shape) +
                                  ", model " + shape_str(t.shape()));
        }
        auto d = t.mutable_data();
        std::copy(it->second.values.begin(), it->second.values.end(), d.begin());
        ++matched;
    });
    if (matched != stored.size()) throw CheckpointError("checkpoint has parameters the model does not define");
    return model;
}

}  // namespace hiegat
