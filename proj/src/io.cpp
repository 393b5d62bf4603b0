#include "aff/io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "aff/checksum.hpp"

namespace aff {

namespace {

constexpr char kFeatureMagic[4] = {'A', 'F', 'F', '1'};
constexpr char kCheckpointMagic[4] = {'A', 'F', 'F', 'C'};
constexpr std::uint8_t kLittleEndian = 1;

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) {
        buf_.push_back(v & 0xFFu);
        buf_.push_back((v >> 8) & 0xFFu);
    }
    void u32(std::uint32_t v) {
        for (int s = 0; s < 32; s += 8) buf_.push_back((v >> s) & 0xFFu);
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        if (s.size() > 0xFFFF) throw SchemaError("string field too long");
        u16(static_cast<std::uint16_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }
    void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
    void float_payload(const Matrix& m) {
        for (std::size_t i = 0; i < m.size(); ++i) append_float_le(buf_, m.at(i));
    }
    const std::vector<std::uint8_t>& bytes() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<std::uint8_t> buf) : buf_(std::move(buf)) {}

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

    std::uint8_t u8() {
        need(1, "u8");
        return buf_[pos_++];
    }
    std::uint16_t u16() {
        need(2, "u16");
        std::uint16_t v = buf_[pos_] | (std::uint16_t(buf_[pos_ + 1]) << 8);
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    std::string str() {
        const std::uint16_t n = u16();
        need(n, "string");
        std::string s(buf_.begin() + pos_, buf_.begin() + pos_ + n);
        pos_ += n;
        return s;
    }
    double f32() {
        need(4, "float");
        std::uint32_t bits = 0;
        for (int i = 0; i < 4; ++i) bits |= std::uint32_t(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        float f;
        std::memcpy(&f, &bits, 4);
        return static_cast<double>(f);
    }
    void expect_magic(const char magic[4], const char* what) {
        need(4, what);
        if (std::memcmp(buf_.data() + pos_, magic, 4) != 0) {
            throw FormatError(std::string("bad magic, not a ") + what + " file", pos_);
        }
        pos_ += 4;
    }
    void need(std::size_t n, const char* what) const {
        if (pos_ + n > buf_.size()) {
            throw FormatError(std::string("truncated file while reading ") + what, pos_);
        }
    }
    const std::uint8_t* at() const { return buf_.data() + pos_; }
    void skip(std::size_t n) {
        need(n, "payload");
        pos_ += n;
    }

private:
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    return buf;
}

void spill(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

void check_bundle_matches(const FeatureBundle& b,
                          const std::vector<FamilyDescriptor>& families) {
    std::size_t gi = 0, li = 0;
    for (const auto& f : families) {
        if (f.kind == FamilyKind::local) {
            if (li >= b.locals.size() || b.locals[li].rows() != f.count ||
                b.locals[li].cols() != f.dim) {
                throw SchemaError("bundle " + b.item_id + " does not match family schema");
            }
            ++li;
        } else {
            if (gi >= b.globals.size() || b.globals[gi].cols() != f.dim) {
                throw SchemaError("bundle " + b.item_id + " does not match family schema");
            }
            ++gi;
        }
    }
    if (gi != b.globals.size() || li != b.locals.size()) {
        throw SchemaError("bundle " + b.item_id + " has extra families");
    }
}

}  // namespace

std::vector<FamilyDescriptor> descriptors_of(const std::vector<FamilySpec>& families) {
    std::vector<FamilyDescriptor> out;
    for (const auto& f : families) {
        out.push_back({f.kind, static_cast<std::uint32_t>(f.dim),
                       static_cast<std::uint32_t>(f.count)});
    }
    return out;
}

std::uint32_t write_features(const std::vector<FeatureBundle>& bundles,
                             const std::vector<FamilyDescriptor>& families,
                             const std::string& path) {
    if (bundles.empty()) throw SchemaError("write_features: no bundles");
    for (const auto& b : bundles) check_bundle_matches(b, families);

    ByteWriter header;
    header.raw(kFeatureMagic, 4);
    header.u8(kLittleEndian);
    header.u32(static_cast<std::uint32_t>(bundles.size()));
    header.u32(static_cast<std::uint32_t>(families.size()));
    for (const auto& f : families) {
        header.u8(static_cast<std::uint8_t>(f.kind));
        header.u32(f.dim);
        header.u32(f.count);
    }
    for (const auto& b : bundles) {
        header.str(b.item_id);
        header.i32(b.label);
    }

    ByteWriter payload;
    for (const auto& b : bundles) {
        std::size_t gi = 0, li = 0;
        for (const auto& f : families) {
            if (f.kind == FamilyKind::local) {
                payload.float_payload(b.locals[li++]);
            } else {
                payload.float_payload(b.globals[gi++]);
            }
        }
    }
    const std::uint32_t crc =
        crc32_bytes(payload.bytes().data(), payload.bytes().size());

    ByteWriter file;
    file.raw(reinterpret_cast<const char*>(header.bytes().data()), header.bytes().size());
    file.raw(reinterpret_cast<const char*>(payload.bytes().data()), payload.bytes().size());
    file.u32(crc);
    spill(path, file.bytes());
    return crc;
}

FeatureFileContents read_features(const std::string& path) {
    ByteReader r(slurp(path));
    r.expect_magic(kFeatureMagic, "AFF1 feature");
    const std::uint8_t endian = r.u8();
    if (endian != kLittleEndian) {
        throw FormatError("unsupported endianness flag " + std::to_string(endian), r.pos() - 1);
    }
    const std::uint32_t item_count = r.u32();
    const std::uint32_t family_count = r.u32();

    FeatureFileContents out;
    std::size_t floats_per_item = 0;
    for (std::uint32_t i = 0; i < family_count; ++i) {
        FamilyDescriptor f;
        const std::uint8_t kind = r.u8();
        if (kind > 2) throw FormatError("unknown family kind " + std::to_string(kind), r.pos() - 1);
        f.kind = static_cast<FamilyKind>(kind);
        f.dim = r.u32();
        f.count = r.u32();
        if (f.dim == 0 || f.count == 0) {
            throw FormatError("family with zero extent", r.pos() - 8);
        }
        floats_per_item += std::size_t(f.dim) * f.count;
        out.families.push_back(f);
    }

    out.bundles.resize(item_count);
    for (std::uint32_t i = 0; i < item_count; ++i) {
        out.bundles[i].item_id = r.str();
        out.bundles[i].label = r.i32();
    }

    const std::size_t payload_bytes = floats_per_item * item_count * 4;
    const std::size_t payload_start = r.pos();
    if (r.remaining() < payload_bytes + 4) {
        throw FormatError("declared payload exceeds file size", r.pos());
    }
    if (r.remaining() != payload_bytes + 4) {
        throw FormatError("payload length disagrees with declared sizes", r.pos());
    }
    const std::uint32_t crc = crc32_bytes(r.at(), payload_bytes);

    for (std::uint32_t i = 0; i < item_count; ++i) {
        FeatureBundle& b = out.bundles[i];
        for (const auto& f : out.families) {
            Matrix m(f.kind == FamilyKind::local ? f.count : 1, f.dim);
            for (std::size_t k = 0; k < m.size(); ++k) m.at(k) = r.f32();
            if (f.kind == FamilyKind::local) {
                b.locals.push_back(std::move(m));
            } else {
                b.globals.push_back(std::move(m));
            }
        }
    }

    const std::uint32_t stored = r.u32();
    if (stored != crc) {
        throw FormatError("payload checksum mismatch (stored " + std::to_string(stored) +
                              ", computed " + std::to_string(crc) + ")",
                          payload_start);
    }
    out.checksum = crc;
    return out;
}

// ---------------------------------------------------------------- checkpoints

const Matrix& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors) {
        if (n == name) return m;
    }
    throw SchemaError("checkpoint: missing tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, m] : tensors) {
        (void)m;
        if (n == name) return true;
    }
    return false;
}

std::uint32_t save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    ByteWriter header;
    header.raw(kCheckpointMagic, 4);
    header.u8(kLittleEndian);
    header.str(ckpt.kind);
    header.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, m] : ckpt.tensors) {
        header.str(name);
        header.u32(static_cast<std::uint32_t>(m.rows()));
        header.u32(static_cast<std::uint32_t>(m.cols()));
    }
    ByteWriter payload;
    for (const auto& [name, m] : ckpt.tensors) {
        (void)name;
        payload.float_payload(m);
    }
    const std::uint32_t crc =
        crc32_bytes(payload.bytes().data(), payload.bytes().size());

    ByteWriter file;
    file.raw(reinterpret_cast<const char*>(header.bytes().data()), header.bytes().size());
    file.raw(reinterpret_cast<const char*>(payload.bytes().data()), payload.bytes().size());
    file.u32(crc);
    spill(path, file.bytes());
    return crc;
}

Checkpoint load_checkpoint(const std::string& path) {
    ByteReader r(slurp(path));
    r.expect_magic(kCheckpointMagic, "AFFC checkpoint");
    const std::uint8_t endian = r.u8();
    if (endian != kLittleEndian) {
        throw FormatError("unsupported endianness flag", r.pos() - 1);
    }
    Checkpoint out;
    out.kind = r.str();
    const std::uint32_t count = r.u32();
    std::vector<std::pair<std::string, std::pair<std::uint32_t, std::uint32_t>>> shapes;
    std::size_t total_floats = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        shapes.push_back({name, {rows, cols}});
        total_floats += std::size_t(rows) * cols;
    }
    const std::size_t payload_start = r.pos();
    if (r.remaining() != total_floats * 4 + 4) {
        throw FormatError("payload length disagrees with declared shapes", r.pos());
    }
    const std::uint32_t crc = crc32_bytes(r.at(), total_floats * 4);
    for (const auto& [name, shape] : shapes) {
        Matrix m(shape.first, shape.second);
        for (std::size_t k = 0; k < m.size(); ++k) m.at(k) = r.f32();
        out.tensors.emplace_back(name, std::move(m));
    }
    const std::uint32_t stored = r.u32();
    if (stored != crc) {
        throw FormatError("checkpoint checksum mismatch", payload_start);
    }
    return out;
}

namespace {

Matrix meta_row(std::initializer_list<double> values) {
    Matrix m(1, values.size());
    std::size_t i = 0;
    for (double v : values) m.at(i++) = v;
    return m;
}

void restore_params(std::vector<ParamRef> params, const Checkpoint& ckpt) {
    for (auto& p : params) {
        const Matrix& stored = ckpt.tensor(p.name);
        if (!stored.same_shape(*p.value)) {
            throw SchemaError("checkpoint tensor '" + p.name + "' has shape " +
                              shape_string(stored) + ", model expects " +
                              shape_string(*p.value));
        }
        *p.value = stored;
    }
}

void append_head(Checkpoint& ckpt, const ClassifierHead& head) {
    ckpt.tensors.emplace_back("head.prototypes", head.prototypes);
    ckpt.tensors.emplace_back("meta.head", meta_row({head.scale, head.margin}));
}

ClassifierHead head_from(const Checkpoint& ckpt) {
    ClassifierHead head;
    head.prototypes = ckpt.tensor("head.prototypes");
    const Matrix& meta = ckpt.tensor("meta.head");
    head.scale = meta.at(0);
    head.margin = meta.at(1);
    return head;
}

Matrix schema_globals_tensor(const BundleSchema& schema) {
    Matrix m(1, schema.global_dims.size());
    for (std::size_t i = 0; i < schema.global_dims.size(); ++i)
        m.at(i) = double(schema.global_dims[i]);
    return m;
}

Matrix schema_locals_tensor(const BundleSchema& schema) {
    Matrix m(schema.local_shapes.size(), 2);
    for (std::size_t i = 0; i < schema.local_shapes.size(); ++i) {
        m(i, 0) = double(schema.local_shapes[i].first);
        m(i, 1) = double(schema.local_shapes[i].second);
    }
    return m;
}

BundleSchema schema_from(const Checkpoint& ckpt) {
    BundleSchema schema;
    const Matrix& g = ckpt.tensor("meta.schema.globals");
    for (std::size_t i = 0; i < g.size(); ++i)
        schema.global_dims.push_back(std::size_t(g.at(i)));
    const Matrix& l = ckpt.tensor("meta.schema.locals");
    for (std::size_t i = 0; i < l.rows(); ++i) {
        schema.local_shapes.emplace_back(std::size_t(l(i, 0)), std::size_t(l(i, 1)));
    }
    return schema;
}

}  // namespace

Checkpoint checkpoint_of_gallery(const GalleryEncoder& model, const ClassifierHead& head) {
    Checkpoint ckpt;
    ckpt.kind = model.kind();
    auto& m = const_cast<GalleryEncoder&>(model);  // params() is non-const by design
    if (const auto* mixer = dynamic_cast<const DynamicMixer*>(&model)) {
        const MixerConfig& cfg = mixer->config();
        ckpt.tensors.emplace_back(
            "meta.mixer", meta_row({double(cfg.d), double(cfg.hidden()), double(cfg.depth),
                                    double(cfg.heads), cfg.shared_weights ? 1.0 : 0.0}));
        ckpt.tensors.emplace_back("meta.schema.globals", schema_globals_tensor(mixer->schema()));
        ckpt.tensors.emplace_back("meta.schema.locals", schema_locals_tensor(mixer->schema()));
    } else if (const auto* mlp = dynamic_cast<const BaselineMixer*>(&model)) {
        const std::size_t hidden = mlp->fc2.weight.size() == 0 ? 0 : mlp->fc1.out_dim();
        ckpt.tensors.emplace_back("meta.mlp",
                                  meta_row({double(mlp->out_dim()), double(hidden)}));
        ckpt.tensors.emplace_back("meta.schema.globals", schema_globals_tensor(mlp->schema()));
        ckpt.tensors.emplace_back("meta.schema.locals", schema_locals_tensor(mlp->schema()));
    } else {
        throw SchemaError("unknown gallery model kind " + model.kind());
    }
    for (auto& p : m.params()) ckpt.tensors.emplace_back(p.name, *p.value);
    append_head(ckpt, head);
    return ckpt;
}

Checkpoint checkpoint_of_encoder(const QueryEncoder& model, const ClassifierHead& head) {
    Checkpoint ckpt;
    ckpt.kind = "encoder";
    auto& m = const_cast<QueryEncoder&>(model);
    ckpt.tensors.emplace_back(
        "meta.encoder",
        meta_row({double(m.in_dim()), double(m.fc1.out_dim()), double(m.out_dim())}));
    for (auto& p : m.params()) ckpt.tensors.emplace_back(p.name, *p.value);
    append_head(ckpt, head);
    return ckpt;
}

std::unique_ptr<GalleryEncoder> gallery_from_checkpoint(const Checkpoint& ckpt,
                                                        ClassifierHead* head_out) {
    std::unique_ptr<GalleryEncoder> model;
    const BundleSchema schema = schema_from(ckpt);
    if (ckpt.kind == "mixer") {
        const Matrix& meta = ckpt.tensor("meta.mixer");
        MixerConfig cfg;
        cfg.d = std::size_t(meta.at(0));
        cfg.d_e = std::size_t(meta.at(1));
        cfg.depth = std::size_t(meta.at(2));
        cfg.heads = std::size_t(meta.at(3));
        cfg.shared_weights = meta.at(4) != 0.0;
        model = std::make_unique<DynamicMixer>(schema, cfg, 0);
    } else if (ckpt.kind == "mlp") {
        const Matrix& meta = ckpt.tensor("meta.mlp");
        model = std::make_unique<BaselineMixer>(schema, std::size_t(meta.at(0)),
                                                std::size_t(meta.at(1)), 0);
    } else {
        throw SchemaError("checkpoint kind '" + ckpt.kind + "' is not a gallery model");
    }
    restore_params(model->params(), ckpt);
    if (head_out) *head_out = head_from(ckpt);
    return model;
}

QueryEncoder encoder_from_checkpoint(const Checkpoint& ckpt, ClassifierHead* head_out) {
    if (ckpt.kind != "encoder") {
        throw SchemaError("checkpoint kind '" + ckpt.kind + "' is not an encoder");
    }
    const Matrix& meta = ckpt.tensor("meta.encoder");
    QueryEncoder enc(std::size_t(meta.at(0)), std::size_t(meta.at(1)),
                     std::size_t(meta.at(2)), 0);
    restore_params(enc.params(), ckpt);
    if (head_out) *head_out = head_from(ckpt);
    return enc;
}

// ------------------------------------------------------------------- dataset

namespace {

const char* kTrainFile = "train.aff";
const char* kTrainViews = "train_views.aff";
const char* kGalleryFile = "gallery.aff";
const char* kQueryFile = "query.aff";
const char* kQueryViews = "query_views.aff";

std::vector<FeatureBundle> bundles_of(const std::vector<SynthItem>& items) {
    std::vector<FeatureBundle> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.bundle);
    return out;
}

std::vector<FeatureBundle> views_of(const std::vector<SynthItem>& items) {
    std::vector<FeatureBundle> out;
    out.reserve(items.size());
    for (const auto& it : items) {
        FeatureBundle b;
        b.item_id = it.bundle.item_id;
        b.label = it.bundle.label;
        b.globals.push_back(it.query_view);
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace

std::uint32_t write_dataset(const SynthDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto path = [&](const char* name) { return (fs::path(dir) / name).string(); };

    const auto fams = descriptors_of(ds.spec.families);
    const std::vector<FamilyDescriptor> view_fam{
        {FamilyKind::global, static_cast<std::uint32_t>(ds.spec.query_dim), 1}};

    write_features(bundles_of(ds.train), fams, path(kTrainFile));
    write_features(views_of(ds.train), view_fam, path(kTrainViews));
    write_features(bundles_of(ds.gallery), fams, path(kGalleryFile));
    write_features(bundles_of(ds.query), fams, path(kQueryFile));
    write_features(views_of(ds.query), view_fam, path(kQueryViews));
    return ds.checksum();
}

SynthDataset read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto path = [&](const char* name) { return (fs::path(dir) / name).string(); };

    const FeatureFileContents train = read_features(path(kTrainFile));
    const FeatureFileContents train_views = read_features(path(kTrainViews));
    const FeatureFileContents gallery = read_features(path(kGalleryFile));
    const FeatureFileContents query = read_features(path(kQueryFile));
    const FeatureFileContents query_views = read_features(path(kQueryViews));

    SynthDataset ds;
    // reconstruct the family list (generator-only fields stay zero)
    for (const auto& f : train.families) {
        ds.spec.families.push_back({f.kind, f.dim, f.count, 0, 0.0});
    }
    if (!train_views.families.empty()) {
        ds.spec.query_dim = train_views.families.front().dim;
    }

    auto attach = [](const FeatureFileContents& bundles, const FeatureFileContents* views,
                     std::vector<SynthItem>& out, const char* split) {
        if (views && views->bundles.size() != bundles.bundles.size()) {
            throw SchemaError(std::string("dataset ") + split +
                              ": view count differs from bundle count");
        }
        for (std::size_t i = 0; i < bundles.bundles.size(); ++i) {
            SynthItem item;
            item.bundle = bundles.bundles[i];
            if (views) {
                if (views->bundles[i].item_id != item.bundle.item_id) {
                    throw SchemaError(std::string("dataset ") + split +
                                      ": view id mismatch at index " + std::to_string(i));
                }
                item.query_view = views->bundles[i].globals.front();
            }
            out.push_back(std::move(item));
        }
    };

    attach(train, &train_views, ds.train, "train");
    attach(gallery, nullptr, ds.gallery, "gallery");
    attach(query, &query_views, ds.query, "query");

    int max_label = -1;
    for (const auto& it : ds.train) max_label = std::max(max_label, it.bundle.label);
    ds.spec.classes = static_cast<std::size_t>(max_label + 1);
    return ds;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("short write to " + path);
}

}  // namespace aff
