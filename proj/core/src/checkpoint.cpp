#include "mmali/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mmali {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'A', 'L', 'I', 'C', 'K', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) {
        buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) {
        throw std::runtime_error("checkpoint: truncated file while reading integer");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    }
    return v;
}

void write_f64(std::ostream& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64(out, bits);
}

double read_f64(std::istream& in) {
    const std::uint64_t bits = read_u64(in);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

} // namespace

void save_checkpoint(const std::map<std::string, Tensor>& entries, std::ostream& out) {
    out.write(kMagic, 8);
    write_u64(out, entries.size());
    for (const auto& [name, t] : entries) {
        write_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(out, t.ndim());
        for (auto d : t.shape()) {
            write_u64(out, d);
        }
        for (double v : t.data()) {
            write_f64(out, v);
        }
    }
    if (!out) {
        throw std::runtime_error("checkpoint: write failed");
    }
}

std::map<std::string, Tensor> load_checkpoint(std::istream& in) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw std::runtime_error("checkpoint: bad magic, not a parameter file of this version");
    }
    const std::uint64_t count = read_u64(in);
    std::map<std::string, Tensor> entries;
    for (std::uint64_t e = 0; e < count; ++e) {
        const std::uint64_t name_len = read_u64(in);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        const std::uint64_t ndim = read_u64(in);
        std::vector<std::size_t> shape(ndim);
        std::size_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(read_u64(in));
            numel *= d;
        }
        std::vector<double> data(numel);
        for (auto& v : data) {
            v = read_f64(in);
        }
        if (!in) {
            throw std::runtime_error("checkpoint: truncated entry " + name);
        }
        entries.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return entries;
}

void save_checkpoint(const std::map<std::string, Tensor>& entries, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    }
    save_checkpoint(entries, out);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("checkpoint: cannot open " + path);
    }
    return load_checkpoint(in);
}

void collect_params(const ParamStore& params, const std::string& prefix,
                    std::map<std::string, Tensor>& into) {
    for (const auto& name : params.names()) {
        into.emplace(prefix + "/" + name, params.param(name));
    }
}

void restore_params(ParamStore& params, const std::string& prefix,
                    const std::map<std::string, Tensor>& from) {
    for (const auto& name : params.names()) {
        auto it = from.find(prefix + "/" + name);
        if (it == from.end()) {
            throw std::runtime_error("checkpoint: missing entry " + prefix + "/" + name);
        }
        Tensor& p = params.param(name);
        if (it->second.shape() != p.shape()) {
            throw std::runtime_error("checkpoint: shape mismatch for " + prefix + "/" + name +
                                     ": file has " + it->second.shape_str() + ", model expects " +
                                     p.shape_str());
        }
        p = it->second;
    }
    params.bump_revision();
}

std::string serialize_params(const ParamStore& params) {
    std::map<std::string, Tensor> entries;
    collect_params(params, "p", entries);
    std::ostringstream os(std::ios::binary);
    save_checkpoint(entries, os);
    return os.str();
}

} // namespace mmali
