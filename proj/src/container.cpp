#include "cellscape/container.hpp"

#include "cellscape/error.hpp"

#include <boost/crc.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cellscape {

namespace fs = std::filesystem;

std::uint32_t crc32c(std::span<const std::byte> bytes) {
    // Castagnoli polynomial, reflected, as used by iSCSI/ext4.
    boost::crc_optimal<32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF, true, true> crc;
    crc.process_bytes(bytes.data(), bytes.size());
    return crc.checksum();
}

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void append_le(std::vector<std::byte>& out, T value) {
    std::array<std::byte, sizeof(T)> raw;
    std::memcpy(raw.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    out.insert(out.end(), raw.begin(), raw.end());
}

template <typename T>
T read_le(const std::byte* p) {
    std::array<std::byte, sizeof(T)> raw;
    std::memcpy(raw.data(), p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    T value;
    std::memcpy(&value, raw.data(), sizeof(T));
    return value;
}

template <typename T>
std::vector<std::byte> encode_array(std::span<const T> values) {
    std::vector<std::byte> out;
    out.reserve(values.size() * sizeof(T));
    if constexpr (std::endian::native == std::endian::little) {
        const auto* p = reinterpret_cast<const std::byte*>(values.data());
        out.assign(p, p + values.size_bytes());
    } else {
        for (T v : values) append_le(out, v);
    }
    return out;
}

template <typename T>
std::vector<T> decode_array(const std::vector<std::byte>& bytes, std::size_t count, const std::string& file) {
    if (bytes.size() != count * sizeof(T)) {
        throw Error(ErrorCode::ChecksumMismatch,
                    "file '" + file + "' has " + std::to_string(bytes.size()) + " bytes, expected " +
                        std::to_string(count * sizeof(T)),
                    file);
    }
    std::vector<T> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = read_le<T>(bytes.data() + i * sizeof(T));
    return out;
}

std::vector<std::byte> encode_strings(const std::vector<std::string>& values) {
    std::vector<std::byte> out;
    for (const auto& s : values) {
        append_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
        const auto* p = reinterpret_cast<const std::byte*>(s.data());
        out.insert(out.end(), p, p + s.size());
    }
    return out;
}

std::vector<std::string> decode_strings(const std::vector<std::byte>& bytes, std::size_t count,
                                        const std::string& file) {
    std::vector<std::string> out;
    out.reserve(count);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < count; ++i) {
        if (pos + 4 > bytes.size()) throw Error(ErrorCode::ChecksumMismatch, "truncated string file", file);
        const auto len = read_le<std::uint32_t>(bytes.data() + pos);
        pos += 4;
        if (pos + len > bytes.size()) throw Error(ErrorCode::ChecksumMismatch, "truncated string file", file);
        out.emplace_back(reinterpret_cast<const char*>(bytes.data() + pos), len);
        pos += len;
    }
    if (pos != bytes.size()) throw Error(ErrorCode::ChecksumMismatch, "trailing bytes in string file", file);
    return out;
}

void write_file(const fs::path& path, std::span<const std::byte> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing", path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "failed writing '" + path.string() + "'", path.string());
}

std::vector<std::byte> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'", path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::byte> bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in) throw Error(ErrorCode::IoError, "failed reading '" + path.string() + "'", path.string());
    return bytes;
}

std::string index_name(const char* prefix, std::size_t i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%03zu.%s", prefix, i, ext);
    return buf;
}

struct Writer {
    fs::path dir;
    Json columns = Json::array();

    void add(Json descriptor, const std::string& file, const std::vector<std::byte>& bytes) {
        write_file(dir / file, bytes);
        descriptor["file"] = file;
        descriptor["crc32c"] = crc32c(bytes);
        columns.push_back(std::move(descriptor));
    }
};

Json record_to_json(const ProvenanceRecord& r) {
    return {{"operation", r.operation},
            {"parameters", r.parameters},
            {"timestamp", r.timestamp},
            {"warnings", r.warnings}};
}

ProvenanceRecord record_from_json(const Json& j) {
    ProvenanceRecord r;
    r.operation = j.at("operation").get<std::string>();
    r.parameters = j.at("parameters");
    r.timestamp = j.at("timestamp").get<std::string>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
}

bool is_container_file(const fs::path& p) {
    const auto ext = p.extension().string();
    return p.filename() == "manifest.json" || ext == ".f32" || ext == ".f64" || ext == ".u32" || ext == ".bin";
}

}  // namespace

void save_container(const CellTable& table, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create '" + dir.string() + "': " + ec.message(), dir.string());
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
        if (entry.is_regular_file() && is_container_file(entry.path())) fs::remove(entry.path(), ec);
    }

    const std::size_t n = table.n_cells();
    Writer w{dir};
    w.add({{"name", "cell_ids"}, {"kind", "cell_ids"}, {"dtype", "utf8"}, {"shape", {n}}}, "cell_ids.bin",
          encode_strings(table.cell_ids()));
    w.add({{"name", "coords"}, {"kind", "coords"}, {"dtype", "float64"}, {"shape", {n, 2}}}, "coords.f64",
          encode_array(table.coords().values()));
    w.add({{"name", "features"}, {"kind", "features"}, {"dtype", "float32"}, {"shape", {n, table.n_features()}}},
          "features.f32", encode_array(table.features().values()));

    std::size_t i = 0;
    for (const auto& [name, m] : table.layers()) {
        w.add({{"name", name}, {"kind", "layer"}, {"dtype", "float32"}, {"shape", {m.rows(), m.cols()}}},
              index_name("layer", i++, "f32"), encode_array(m.values()));
    }
    i = 0;
    for (const auto& [name, col] : table.annotations()) {
        w.add({{"name", name},
               {"kind", "annotation"},
               {"dtype", "uint32"},
               {"shape", {n}},
               {"categories", col.categories()}},
              index_name("annotation", i++, "u32"), encode_array(col.codes()));
    }
    i = 0;
    for (const auto& [name, a] : table.associated()) {
        w.add({{"name", name},
               {"kind", "associated"},
               {"dtype", "float32"},
               {"shape", {a.values.rows(), a.values.cols()}},
               {"column_labels", a.column_labels}},
              index_name("associated", i++, "f32"), encode_array(a.values.values()));
    }

    Json provenance = Json::array();
    for (const auto& r : table.provenance()) provenance.push_back(record_to_json(r));

    Json manifest = {{"format", "cell-container"},
                     {"version", kContainerVersion},
                     {"n_cells", n},
                     {"feature_names", table.feature_names()},
                     {"columns", std::move(w.columns)},
                     {"provenance", std::move(provenance)}};
    manifest["slide_label"] = table.slide_label() ? Json(*table.slide_label()) : Json(nullptr);
    const std::string text = manifest.dump(2) + "\n";
    write_file(dir / "manifest.json",
               std::span<const std::byte>(reinterpret_cast<const std::byte*>(text.data()), text.size()));
}

CellTable load_container(const fs::path& dir) {
    const auto manifest_bytes = read_file(dir / "manifest.json");
    Json manifest;
    try {
        manifest = Json::parse(reinterpret_cast<const char*>(manifest_bytes.data()),
                               reinterpret_cast<const char*>(manifest_bytes.data()) + manifest_bytes.size());
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::IoError, std::string("manifest.json is not valid JSON: ") + e.what(), "manifest.json");
    }

    try {
        const int version = manifest.at("version").get<int>();
        if (version != kContainerVersion) {
            throw Error(ErrorCode::FormatVersionMismatch,
                        "container version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kContainerVersion) + ")",
                        "version");
        }
        const auto n = manifest.at("n_cells").get<std::size_t>();
        auto feature_names = manifest.at("feature_names").get<std::vector<std::string>>();

        auto load_checked = [&](const Json& col) {
            const auto file = col.at("file").get<std::string>();
            auto bytes = read_file(dir / file);
            if (crc32c(bytes) != col.at("crc32c").get<std::uint32_t>()) {
                throw Error(ErrorCode::ChecksumMismatch, "checksum mismatch in '" + file + "'", file);
            }
            return bytes;
        };
        auto shape_count = [](const Json& col) {
            std::size_t count = 1;
            for (const auto& d : col.at("shape")) count *= d.get<std::size_t>();
            return count;
        };

        std::vector<std::string> cell_ids;
        Matrix<double> coords;
        Matrix<float> features;
        std::vector<std::pair<std::string, Matrix<float>>> layers;
        std::vector<std::pair<std::string, CategoricalColumn>> annotations;
        std::vector<std::pair<std::string, AssociatedTable>> associated;

        for (const auto& col : manifest.at("columns")) {
            const auto kind = col.at("kind").get<std::string>();
            const auto name = col.at("name").get<std::string>();
            const auto file = col.at("file").get<std::string>();
            const auto bytes = load_checked(col);
            const auto& shape = col.at("shape");
            if (kind == "cell_ids") {
                cell_ids = decode_strings(bytes, n, file);
            } else if (kind == "coords") {
                coords = Matrix<double>(n, 2, decode_array<double>(bytes, n * 2, file));
            } else if (kind == "features") {
                features = Matrix<float>(n, feature_names.size(),
                                         decode_array<float>(bytes, n * feature_names.size(), file));
            } else if (kind == "layer" || kind == "associated") {
                const auto rows = shape.at(0).get<std::size_t>();
                const auto cols = shape.at(1).get<std::size_t>();
                Matrix<float> m(rows, cols, decode_array<float>(bytes, shape_count(col), file));
                if (kind == "layer") {
                    layers.emplace_back(name, std::move(m));
                } else {
                    associated.emplace_back(
                        name, AssociatedTable{std::move(m), col.at("column_labels").get<std::vector<std::string>>()});
                }
            } else if (kind == "annotation") {
                annotations.emplace_back(name,
                                         CategoricalColumn(decode_array<std::uint32_t>(bytes, n, file),
                                                           col.at("categories").get<std::vector<std::string>>()));
            } else {
                throw Error(ErrorCode::IoError, "unknown column kind '" + kind + "'", name);
            }
        }

        CellTable table = CellTable::create(std::move(cell_ids), std::move(coords), std::move(features),
                                            std::move(feature_names));
        for (auto& [name, m] : layers) table = table.with_layer(name, std::move(m));
        for (auto& [name, c] : annotations) table = table.with_annotation(name, std::move(c));
        for (auto& [name, a] : associated) table = table.with_associated(name, std::move(a));
        std::vector<ProvenanceRecord> records;
        for (const auto& r : manifest.at("provenance")) records.push_back(record_from_json(r));
        table = table.with_provenance(std::move(records));
        if (manifest.contains("slide_label") && !manifest.at("slide_label").is_null()) {
            table = table.with_slide_label(manifest.at("slide_label").get<std::string>());
        }
        return table;
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::IoError, std::string("malformed manifest: ") + e.what(), "manifest.json");
    }
}

}  // namespace cellscape
