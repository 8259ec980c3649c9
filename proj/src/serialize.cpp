#include "dnl/serialize.hpp"

#include <fstream>

#include "dnl/binary_io.hpp"

namespace dnl {

void write_tensor(std::ostream& os, const Tensor& t) {
    io::Writer w(os);
    w.magic("DNLT");
    w.u32(kTensorFormatVersion);
    if (t.rank() > 255) throw DimensionError("tensor rank exceeds format limit");
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) w.u64(e);
    for (Scalar v : t.data()) w.f64(static_cast<double>(v));
}

Tensor read_tensor(std::istream& is) {
    io::Reader r(is);
    r.expect_magic("DNLT", "tensor");
    const auto version = r.u32();
    if (version != kTensorFormatVersion) {
        throw FormatError("tensor: unsupported version " + std::to_string(version));
    }
    const auto rank = r.u8();
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& e : shape) {
        e = r.u64();
        if (e != 0 && n > (std::size_t{1} << 40) / e) throw CorruptionError("tensor: extents too large");
        n *= e;
    }
    std::vector<Scalar> values(n);
    for (auto& v : values) v = static_cast<Scalar>(r.f64());
    return Tensor::from(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path.string());
    return read_tensor(is);
}

}  // namespace dnl
