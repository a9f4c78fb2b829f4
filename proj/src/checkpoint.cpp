#include "mmon/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <limits>

#include "mmon/error.hpp"
#include "mmon/le_bytes.hpp"

namespace mmon::ag {

namespace {
constexpr std::string_view kMagic = "MMN1";
}

std::string encode_checkpoint(const NamedTensors& tensors) {
    std::string out(kMagic);
    le::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        le::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw InvalidArgument("rank too large: " + name);
        out.push_back(static_cast<char>(t.rank()));
        for (int d : t.shape()) le::put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : t.values()) le::put_f64(out, v);
    }
    return out;
}

NamedTensors decode_checkpoint(std::string_view bytes) {
    if (bytes.substr(0, kMagic.size()) != kMagic) throw FormatError("bad checkpoint magic");
    std::size_t pos = kMagic.size();
    const std::uint32_t count = le::get_u32(bytes, pos);
    pos += 4;
    NamedTensors out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = le::get_u32(bytes, pos);
        pos += 4;
        if (pos + len > bytes.size()) throw FormatError("truncated tensor name");
        std::string name(bytes.substr(pos, len));
        pos += len;
        if (pos >= bytes.size()) throw FormatError("truncated tensor rank");
        const int rank = static_cast<unsigned char>(bytes[pos++]);
        Shape shape;
        std::size_t n = 1;
        for (int d = 0; d < rank; ++d) {
            const std::uint32_t dim = le::get_u32(bytes, pos);
            pos += 4;
            if (dim > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) throw FormatError("dimension too large");
            shape.push_back(static_cast<int>(dim));
            n *= dim;
        }
        if (n > (bytes.size() - pos) / 8) throw FormatError("truncated data for " + name);
        std::vector<double> values(n);
        for (std::size_t k = 0; k < n; ++k, pos += 8) values[k] = le::get_f64(bytes, pos);
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (pos != bytes.size()) throw FormatError("trailing bytes after checkpoint");
    return out;
}

std::string read_file_bytes(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void save_checkpoint(const std::filesystem::path& file, const NamedTensors& tensors) {
    const std::string bytes = encode_checkpoint(tensors);
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write " + file.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + file.string());
}

NamedTensors load_checkpoint(const std::filesystem::path& file) { return decode_checkpoint(read_file_bytes(file)); }

}  // namespace mmon::ag
