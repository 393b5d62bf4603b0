#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "aff/errors.hpp"
#include "aff/fusion.hpp"
#include "aff/retrieval.hpp"
#include "aff/synth.hpp"
#include "aff/train.hpp"

namespace aff {

// Minimal TOML-style document: [section] tables, [[section]] table arrays,
// and key = value lines with string / integer / float / bool values. Every
// key must be consumed by the typed extraction; leftovers are config errors.
class ConfigDoc {
public:
    struct Value {
        enum class Type { integer, real, boolean, text };
        Type type = Type::integer;
        long long i = 0;
        double d = 0.0;
        bool b = false;
        std::string s;
        int line = 0;
    };

    struct Table {
        std::map<std::string, Value> values;
        mutable std::set<std::string> consumed;
    };

    static ConfigDoc parse(const std::string& text);

    // Tables registered under a section name ([x] yields exactly one).
    const std::vector<Table>* tables(const std::string& section) const;
    void mark_section_known(const std::string& section) const;

    // Throws ConfigError if any section or key was never consumed.
    void reject_unknown() const;

private:
    std::map<std::string, std::vector<Table>> sections_;
    mutable std::set<std::string> known_sections_;
};

// Typed view over one table; getters consume keys.
class TableView {
public:
    TableView(const ConfigDoc::Table* table, std::string where)
        : table_(table), where_(std::move(where)) {}

    long long get_int(const std::string& key, long long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    bool has(const std::string& key) const;

private:
    const ConfigDoc::Value* find(const std::string& key) const;
    const ConfigDoc::Table* table_;
    std::string where_;
};

// Full application configuration covering generation, mixer, training and
// evaluation. Defaults match the documented desk-scale setup.
struct AppConfig {
    GenSpec gen = GenSpec::defaults();
    MixerConfig mixer;
    TrainConfig train;
    std::string gallery_kind = "transformer";  // or "mlp"
    std::size_t eval_truncate = 0;             // 0 = full ranking

    void validate() const;
};

AppConfig parse_config(const std::string& toml_text);
AppConfig load_config_file(const std::string& path);
std::string dump_config(const AppConfig& cfg);

}  // namespace aff
