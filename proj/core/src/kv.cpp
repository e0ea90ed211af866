#include "mmali/kv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mmali {

namespace {
std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) {
        return "";
    }
    return s.substr(a, b - a + 1);
}
} // namespace

void KvDoc::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_) {
        if (k == key) {
            v = value;
            return;
        }
    }
    entries_.emplace_back(key, value);
}

bool KvDoc::has(const std::string& key) const {
    for (const auto& [k, _] : entries_) {
        if (k == key) {
            return true;
        }
    }
    return false;
}

const std::string& KvDoc::get(const std::string& key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) {
            return v;
        }
    }
    throw std::out_of_range("missing key: " + key);
}

std::string KvDoc::get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
}

std::string KvDoc::to_string() const {
    std::ostringstream os;
    for (const auto& [k, v] : entries_) {
        os << k << " = " << v << "\n";
    }
    return os.str();
}

KvDoc KvDoc::parse(const std::string& text) {
    KvDoc doc;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') {
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("key=value parse error at line " + std::to_string(line_no) +
                                     ": no '=' in \"" + t + "\"");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw std::runtime_error("key=value parse error at line " + std::to_string(line_no) +
                                     ": empty key");
        }
        doc.set(key, value);
    }
    return doc;
}

void KvDoc::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    out << to_string();
    if (!out) {
        throw std::runtime_error("write failed: " + path);
    }
}

KvDoc KvDoc::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_csv(const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) {
            out += ",";
        }
        out += format_double(values[i]);
    }
    return out;
}

std::string format_csv_sizes(const std::vector<std::size_t>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) {
            out += ",";
        }
        out += std::to_string(values[i]);
    }
    return out;
}

double parse_double(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) {
            throw std::invalid_argument("trailing characters");
        }
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error(context + ": cannot parse \"" + s + "\" as a number");
    }
}

long long parse_int(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) {
            throw std::invalid_argument("trailing characters");
        }
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error(context + ": cannot parse \"" + s + "\" as an integer");
    }
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    if (s.empty()) {
        return out;
    }
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = s.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(trim(s.substr(start)));
            break;
        }
        out.push_back(trim(s.substr(start, comma - start)));
        start = comma + 1;
    }
    return out;
}

std::vector<double> parse_csv_doubles(const std::string& s, const std::string& context) {
    std::vector<double> out;
    for (const auto& part : split_csv(s)) {
        out.push_back(parse_double(part, context));
    }
    return out;
}

std::vector<std::size_t> parse_csv_sizes(const std::string& s, const std::string& context) {
    std::vector<std::size_t> out;
    for (const auto& part : split_csv(s)) {
        const long long v = parse_int(part, context);
        if (v < 0) {
            throw std::runtime_error(context + ": negative value " + part);
        }
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

} // namespace mmali
