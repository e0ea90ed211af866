#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mmali {

/// Flat human-readable key=value document. Blank lines and lines starting
/// with '#' are skipped; keys keep file order for stable round trips.
class KvDoc {
public:
    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    std::string to_string() const;
    static KvDoc parse(const std::string& text);

    void save(const std::string& path) const;
    static KvDoc load(const std::string& path);

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

// Value formatting that survives a parse round trip.
std::string format_double(double v);
std::string format_csv(const std::vector<double>& values);
std::string format_csv_sizes(const std::vector<std::size_t>& values);

double parse_double(const std::string& s, const std::string& context);
long long parse_int(const std::string& s, const std::string& context);
std::vector<std::string> split_csv(const std::string& s);
std::vector<double> parse_csv_doubles(const std::string& s, const std::string& context);
std::vector<std::size_t> parse_csv_sizes(const std::string& s, const std::string& context);

} // namespace mmali
