#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hiegat/model.hpp"
#include "hiegat/text_pipeline.hpp"
#include "hiegat/trainer.hpp"

namespace hiegat {

/// Bad config file, unknown key, or unparsable value.
class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Flat `section.key` settings, each remembering which layer set it:
/// default < dataset < config file < flag.
class Settings {
   public:
    struct Entry {
        std::string value;
        std::string source;
    };

    Settings() {
        const HieGnnConfig m;
        const TrainConfig t;
        auto num = [](double v) {
            std::ostringstream os;
            os << v;
            return os.str();
        };
        set_default("data.dataset", "custom");
        set_default("data.meta", "");
        set_default("data.text", "");
        set_default("data.cache", "");
        set_default("data.sentence_mode", "punct");
        set_default("data.chunk_size", std::to_string(default_chunk_size));
        set_default("model.embedding_width", std::to_string(m.embedding_width));
        for (auto [name, l] : {std::pair{"word", m.word}, std::pair{"sen", m.sen}, std::pair{"doc", m.doc}}) {
            set_default(std::string("model.") + name + "_layers", std::to_string(l.layers));
            set_default(std::string("model.") + name + "_heads", std::to_string(l.heads));
            set_default(std::string("model.") + name + "_window", std::to_string(l.window));
        }
        set_default("model.readout", to_string(m.readout));
        set_default("model.dropout", num(m.dropout));
        set_default("model.negative_slope", num(m.negative_slope));
        set_default("model.embedding_init", num(m.embedding_init));
        set_default("model.lambda_policy", to_string(m.lambda_policy));
        set_default("train.batch_size", std::to_string(t.batch_size));
        set_default("train.learning_rate", num(t.learning_rate));
        set_default("train.max_epochs", std::to_string(t.max_epochs));
        set_default("train.patience", std::to_string(t.patience));
        set_default("train.validation_fraction", num(t.validation_fraction));
        set_default("train.lambda", "");
        set_default("train.optimizer", to_string(t.optimizer));
        set_default("train.clip_norm", num(t.clip_norm));
        set_default("train.grad_lanes", std::to_string(t.grad_lanes));
        set_default("train.workers", std::to_string(t.workers));
        set_default("train.seed", std::to_string(t.seed));
    }

    void set(const std::string& key, const std::string& value, const std::string& source) {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw ConfigError("unknown setting '" + key + "'");
        it->second = {value, source};
    }

    const std::string& get(const std::string& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw ConfigError("unknown setting '" + key + "'");
        return it->second.value;
    }

    const std::map<std::string, Entry>& entries() const { return entries_; }

    /// Learning rate and sentence splitting for the benchmark corpora.
    void apply_dataset_defaults(const std::string& dataset) {
        static const std::map<std::string, std::pair<std::string, std::string>> bundles = {
            {"mr", {"0.0001", "punct"}},   {"r8", {"0.001", "chunk"}},      {"r52", {"0.001", "chunk"}},
            {"20ng", {"0.001", "punct"}},  {"ohsumed", {"0.001", "punct"}},
        };
        set("data.dataset", dataset, "flag");
        auto it = bundles.find(dataset);
        if (it == bundles.end()) {
            if (dataset == "custom") return;
            throw ConfigError("unknown dataset '" + dataset + "' (known: mr, r8, r52, 20ng, ohsumed, custom)");
        }
        set("train.learning_rate", it->second.first, "dataset:" + dataset);
        set("data.sentence_mode", it->second.second, "dataset:" + dataset);
    }

    /// INI-style file with [data], [model], [train] sections.
    void apply_file(const std::filesystem::path& path) {
        boost::property_tree::ptree tree;
        try {
            boost::property_tree::ini_parser::read_ini(path.string(), tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError(std::string("config file: ") + e.what());
        }
        // A dataset named in the file brings its bundle before the file's own keys.
        if (auto ds = tree.get_optional<std::string>("data.dataset")) {
            apply_dataset_defaults(*ds);
            set("data.dataset", *ds, "file");
        }
        for (const auto& [section, body] : tree) {
            if (body.empty() && !body.data().empty()) throw ConfigError("config file: key '" + section + "' outside a section");
            for (const auto& [key, value] : body) set(section + "." + key, value.data(), "file");
        }
    }

    std::size_t get_size(const std::string& key) const {
        const auto& v = get(key);
        try {
            std::size_t used = 0;
            const auto x = std::stoull(v, &used);
            if (used != v.size() || v.front() == '-') throw std::invalid_argument(v);
            return static_cast<std::size_t>(x);
        } catch (const std::exception&) {
            throw ConfigError("setting " + key + " = '" + v + "' is not a non-negative integer");
        }
    }

    double get_double(const std::string& key) const {
        const auto& v = get(key);
        try {
            std::size_t used = 0;
            const double x = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError("setting " + key + " = '" + v + "' is not a number");
        }
    }

    HieGnnConfig model_config(std::size_t vocab_size, std::size_t class_count) const {
        HieGnnConfig c;
        c.embedding_width = get_size("model.embedding_width");
        c.vocab_size = vocab_size;
        c.class_count = class_count;
        c.word = {get_size("model.word_layers"), get_size("model.word_heads"), get_size("model.word_window")};
        c.sen = {get_size("model.sen_layers"), get_size("model.sen_heads"), get_size("model.sen_window")};
        c.doc = {get_size("model.doc_layers"), get_size("model.doc_heads"), get_size("model.doc_window")};
        auto readout = parse_readout_mode(get("model.readout"));
        if (!readout) throw ConfigError("model.readout must be mean, max or sum");
        c.readout = *readout;
        auto policy = parse_lambda_policy(get("model.lambda_policy"));
        if (!policy) throw ConfigError("model.lambda_policy must be per_sample or batch_mean");
        c.lambda_policy = *policy;
        c.dropout = get_double("model.dropout");
        c.negative_slope = get_double("model.negative_slope");
        c.embedding_init = get_double("model.embedding_init");
        c.seed = get_size("train.seed");
        try {
            c.validate();
        } catch (const InvalidInput& e) {
            throw ConfigError(e.what());
        }
        return c;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.batch_size = get_size("train.batch_size");
        t.learning_rate = get_double("train.learning_rate");
        t.max_epochs = get_size("train.max_epochs");
        t.patience = get_size("train.patience");
        t.validation_fraction = get_double("train.validation_fraction");
        t.clip_norm = get_double("train.clip_norm");
        t.grad_lanes = get_size("train.grad_lanes");
        t.workers = get_size("train.workers");
        t.seed = get_size("train.seed");
        const auto& opt = get("train.optimizer");
        if (opt == "adam") {
            t.optimizer = OptimizerKind::adam;
        } else if (opt == "sgd") {
            t.optimizer = OptimizerKind::sgd;
        } else {
            throw ConfigError("train.optimizer must be adam or sgd");
        }
        if (const auto& l = get("train.lambda"); !l.empty()) t.lambda_override = parse_lambda_triple(l);
        try {
            t.validate();
        } catch (const InvalidInput& e) {
            throw ConfigError(e.what());
        }
        return t;
    }

    IngestOptions ingest_options() const {
        IngestOptions o;
        auto mode = parse_sentence_mode(get("data.sentence_mode"));
        if (!mode) throw ConfigError("data.sentence_mode must be punct or chunk");
        o.sentence_mode = *mode;
        o.chunk_size = get_size("data.chunk_size");
        if (o.chunk_size == 0) throw ConfigError("data.chunk_size must be positive");
        return o;
    }

    static std::array<double, 3> parse_lambda_triple(const std::string& s) {
        std::array<double, 3> out{};
        std::istringstream is(s);
        std::string part;
        std::size_t i = 0;
        while (std::getline(is, part, ',')) {
            if (i == 3) throw ConfigError("lambda must have three comma-separated values, got '" + s + "'");
            try {
                out[i++] = std::stod(part);
            } catch (const std::exception&) {
                throw ConfigError("lambda value '" + part + "' is not a number");
            }
        }
        if (i != 3) throw ConfigError("lambda must have three comma-separated values, got '" + s + "'");
        return out;
    }

   private:
    void set_default(const std::string& key, const std::string& value) { entries_[key] = {value, "default"}; }

    std::map<std::string, Entry> entries_;
};

}  // namespace hiegat
