#include "aff/config.hpp"

#include <cctype>
#include <cstdlib>
#include <sstream>

#include "aff/io.hpp"

namespace aff {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

ConfigDoc::Value parse_value(const std::string& raw, int line) {
    ConfigDoc::Value v;
    v.line = line;
    const std::string t = trim(raw);
    if (t.empty()) throw ConfigError("line " + std::to_string(line) + ": empty value");

    if (t.front() == '"') {
        if (t.size() < 2 || t.back() != '"') {
            throw ConfigError("line " + std::to_string(line) + ": unterminated string");
        }
        v.type = ConfigDoc::Value::Type::text;
        v.s = t.substr(1, t.size() - 2);
        return v;
    }
    if (t == "true" || t == "false") {
        v.type = ConfigDoc::Value::Type::boolean;
        v.b = (t == "true");
        return v;
    }
    // integer first, then float
    {
        char* end = nullptr;
        const long long i = std::strtoll(t.c_str(), &end, 10);
        if (end && *end == '\0') {
            v.type = ConfigDoc::Value::Type::integer;
            v.i = i;
            v.d = static_cast<double>(i);
            return v;
        }
    }
    {
        char* end = nullptr;
        const double d = std::strtod(t.c_str(), &end);
        if (end && *end == '\0') {
            v.type = ConfigDoc::Value::Type::real;
            v.d = d;
            return v;
        }
    }
    throw ConfigError("line " + std::to_string(line) + ": cannot parse value '" + t + "'");
}

}  // namespace

ConfigDoc ConfigDoc::parse(const std::string& text) {
    ConfigDoc doc;
    std::istringstream in(text);
    std::string line;
    std::string current;
    Table* table = nullptr;
    int lineno = 0;

    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(strip_comment(line));
        if (t.empty()) continue;

        if (t.front() == '[') {
            const bool array = t.size() >= 2 && t[1] == '[';
            const std::string close = array ? "]]" : "]";
            if (t.substr(t.size() - close.size()) != close) {
                throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            }
            const std::string name =
                trim(t.substr(array ? 2 : 1, t.size() - 2 * (array ? 2 : 1)));
            if (name.empty()) {
                throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
            }
            current = name;
            auto& vec = doc.sections_[name];
            if (array || vec.empty()) {
                vec.emplace_back();
            } else if (!array && vec.size() == 1 && !vec.front().values.empty()) {
                throw ConfigError("line " + std::to_string(lineno) + ": duplicate section [" +
                                  name + "]");
            }
            table = &vec.back();
            continue;
        }

        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        }
        if (table == nullptr) {
            throw ConfigError("line " + std::to_string(lineno) + ": key '" + key +
                              "' outside any section");
        }
        if (table->values.count(key)) {
            throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key +
                              "' in [" + current + "]");
        }
        table->values[key] = parse_value(t.substr(eq + 1), lineno);
    }
    return doc;
}

const std::vector<ConfigDoc::Table>* ConfigDoc::tables(const std::string& section) const {
    known_sections_.insert(section);
    auto it = sections_.find(section);
    return it == sections_.end() ? nullptr : &it->second;
}

void ConfigDoc::mark_section_known(const std::string& section) const {
    known_sections_.insert(section);
}

void ConfigDoc::reject_unknown() const {
    for (const auto& [name, tabs] : sections_) {
        if (!known_sections_.count(name)) {
            throw ConfigError("unknown config section [" + name + "]");
        }
        for (const auto& tab : tabs) {
            for (const auto& [key, value] : tab.values) {
                if (!tab.consumed.count(key)) {
                    throw ConfigError("unknown config key '" + key + "' in [" + name +
                                      "] (line " + std::to_string(value.line) + ")");
                }
            }
        }
    }
}

const ConfigDoc::Value* TableView::find(const std::string& key) const {
    if (table_ == nullptr) return nullptr;
    auto it = table_->values.find(key);
    if (it == table_->values.end()) return nullptr;
    table_->consumed.insert(key);
    return &it->second;
}

bool TableView::has(const std::string& key) const {
    return table_ != nullptr && table_->values.count(key) > 0;
}

long long TableView::get_int(const std::string& key, long long fallback) const {
    const auto* v = find(key);
    if (!v) return fallback;
    if (v->type != ConfigDoc::Value::Type::integer) {
        throw ConfigError(where_ + "." + key + ": expected an integer");
    }
    return v->i;
}

double TableView::get_double(const std::string& key, double fallback) const {
    const auto* v = find(key);
    if (!v) return fallback;
    if (v->type != ConfigDoc::Value::Type::real &&
        v->type != ConfigDoc::Value::Type::integer) {
        throw ConfigError(where_ + "." + key + ": expected a number");
    }
    return v->d;
}

bool TableView::get_bool(const std::string& key, bool fallback) const {
    const auto* v = find(key);
    if (!v) return fallback;
    if (v->type != ConfigDoc::Value::Type::boolean) {
        throw ConfigError(where_ + "." + key + ": expected true/false");
    }
    return v->b;
}

std::string TableView::get_string(const std::string& key, const std::string& fallback) const {
    const auto* v = find(key);
    if (!v) return fallback;
    if (v->type != ConfigDoc::Value::Type::text) {
        throw ConfigError(where_ + "." + key + ": expected a quoted string");
    }
    return v->s;
}

void AppConfig::validate() const {
    gen.validate();
    mixer.validate();
    train.validate();
    if (gallery_kind != "transformer" && gallery_kind != "mlp") {
        throw ConfigError("mixer.kind must be 'transformer' or 'mlp'");
    }
}

AppConfig parse_config(const std::string& toml_text) {
    const ConfigDoc doc = ConfigDoc::parse(toml_text);
    AppConfig cfg;

    if (const auto* tabs = doc.tables("gen")) {
        TableView t(&tabs->front(), "gen");
        cfg.gen.classes = std::size_t(t.get_int("classes", static_cast<long long>(cfg.gen.classes)));
        cfg.gen.items_per_class =
            std::size_t(t.get_int("items_per_class", static_cast<long long>(cfg.gen.items_per_class)));
        cfg.gen.latent_dim =
            std::size_t(t.get_int("latent_dim", static_cast<long long>(cfg.gen.latent_dim)));
        cfg.gen.query_dim = std::size_t(t.get_int("query_dim", static_cast<long long>(cfg.gen.query_dim)));
        cfg.gen.query_informative = std::size_t(
            t.get_int("query_informative", static_cast<long long>(cfg.gen.query_informative)));
        cfg.gen.query_sigma = t.get_double("query_sigma", cfg.gen.query_sigma);
        cfg.gen.split_train =
            std::size_t(t.get_int("split_train", static_cast<long long>(cfg.gen.split_train)));
        cfg.gen.split_gallery =
            std::size_t(t.get_int("split_gallery", static_cast<long long>(cfg.gen.split_gallery)));
        cfg.gen.split_query =
            std::size_t(t.get_int("split_query", static_cast<long long>(cfg.gen.split_query)));
        cfg.gen.seed = std::uint64_t(t.get_int("seed", static_cast<long long>(cfg.gen.seed)));
    }
    if (const auto* fams = doc.tables("gen.family")) {
        cfg.gen.families.clear();
        for (const auto& tab : *fams) {
            TableView t(&tab, "gen.family");
            FamilySpec f;
            f.kind = family_kind_from_name(t.get_string("kind", "global"));
            f.dim = std::size_t(t.get_int("dim", 32));
            f.count = std::size_t(t.get_int("count", 1));
            f.informative = std::size_t(t.get_int("informative", 18));
            f.sigma = t.get_double("sigma", 0.3);
            cfg.gen.families.push_back(f);
        }
    }

    if (const auto* tabs = doc.tables("mixer")) {
        TableView t(&tabs->front(), "mixer");
        cfg.gallery_kind = t.get_string("kind", cfg.gallery_kind);
        cfg.mixer.d = std::size_t(t.get_int("d", static_cast<long long>(cfg.mixer.d)));
        cfg.mixer.d_e = std::size_t(t.get_int("d_e", static_cast<long long>(cfg.mixer.d_e)));
        cfg.mixer.depth = std::size_t(t.get_int("depth", static_cast<long long>(cfg.mixer.depth)));
        cfg.mixer.heads = std::size_t(t.get_int("heads", static_cast<long long>(cfg.mixer.heads)));
        cfg.mixer.shared_weights = t.get_bool("shared_weights", cfg.mixer.shared_weights);
    }

    if (const auto* tabs = doc.tables("train")) {
        TableView t(&tabs->front(), "train");
        cfg.train.epochs = int(t.get_int("epochs", cfg.train.epochs));
        cfg.train.batch_size =
            std::size_t(t.get_int("batch_size", static_cast<long long>(cfg.train.batch_size)));
        cfg.train.lr = t.get_double("lr", cfg.train.lr);
        cfg.train.weight_decay = t.get_double("weight_decay", cfg.train.weight_decay);
        cfg.train.momentum = t.get_double("momentum", cfg.train.momentum);
        cfg.train.margin = t.get_double("margin", cfg.train.margin);
        cfg.train.scale = t.get_double("scale", cfg.train.scale);
        cfg.train.seed = std::uint64_t(t.get_int("seed", static_cast<long long>(cfg.train.seed)));
        cfg.train.mode = train_mode_from_name(t.get_string("mode", train_mode_name(cfg.train.mode)));
        cfg.train.encoder_hidden =
            std::size_t(t.get_int("encoder_hidden", static_cast<long long>(cfg.train.encoder_hidden)));
    }

    if (const auto* tabs = doc.tables("eval")) {
        TableView t(&tabs->front(), "eval");
        cfg.eval_truncate = std::size_t(t.get_int("truncate", static_cast<long long>(cfg.eval_truncate)));
    }

    doc.reject_unknown();
    cfg.validate();
    return cfg;
}

AppConfig load_config_file(const std::string& path) {
    return parse_config(read_text_file(path));
}

namespace {

std::string fmt_double(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    const std::string s = out.str();
    // keep floats recognizable as floats in the dumped text
    return s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
                   s.find("inf") == std::string::npos
               ? s + ".0"
               : s;
}

}  // namespace

std::string dump_config(const AppConfig& cfg) {
    std::ostringstream out;
    out << "[gen]\n";
    out << "classes = " << cfg.gen.classes << "\n";
    out << "items_per_class = " << cfg.gen.items_per_class << "\n";
    out << "latent_dim = " << cfg.gen.latent_dim << "\n";
    out << "query_dim = " << cfg.gen.query_dim << "\n";
    out << "query_informative = " << cfg.gen.query_informative << "\n";
    out << "query_sigma = " << fmt_double(cfg.gen.query_sigma) << "\n";
    out << "split_train = " << cfg.gen.split_train << "\n";
    out << "split_gallery = " << cfg.gen.split_gallery << "\n";
    out << "split_query = " << cfg.gen.split_query << "\n";
    out << "seed = " << cfg.gen.seed << "\n";
    for (const auto& f : cfg.gen.families) {
        out << "\n[[gen.family]]\n";
        out << "kind = \"" << family_kind_name(f.kind) << "\"\n";
        out << "dim = " << f.dim << "\n";
        out << "count = " << f.count << "\n";
        out << "informative = " << f.informative << "\n";
        out << "sigma = " << fmt_double(f.sigma) << "\n";
    }
    out << "\n[mixer]\n";
    out << "kind = \"" << cfg.gallery_kind << "\"\n";
    out << "d = " << cfg.mixer.d << "\n";
    out << "d_e = " << cfg.mixer.d_e << "  # 0 means 2*d\n";
    out << "depth = " << cfg.mixer.depth << "\n";
    out << "heads = " << cfg.mixer.heads << "\n";
    out << "shared_weights = " << (cfg.mixer.shared_weights ? "true" : "false") << "\n";
    out << "\n[train]\n";
    out << "epochs = " << cfg.train.epochs << "\n";
    out << "batch_size = " << cfg.train.batch_size << "\n";
    out << "lr = " << fmt_double(cfg.train.lr) << "\n";
    out << "weight_decay = " << fmt_double(cfg.train.weight_decay) << "\n";
    out << "momentum = " << fmt_double(cfg.train.momentum) << "\n";
    out << "margin = " << fmt_double(cfg.train.margin) << "\n";
    out << "scale = " << fmt_double(cfg.train.scale) << "\n";
    out << "seed = " << cfg.train.seed << "\n";
    out << "mode = \"" << train_mode_name(cfg.train.mode) << "\"\n";
    out << "encoder_hidden = " << cfg.train.encoder_hidden << "\n";
    out << "\n[eval]\n";
    out << "truncate = " << cfg.eval_truncate << "\n";
    return out.str();
}

}  // namespace aff
