#pragma once

// Observational dataset container plus its on-disk format: UTF-8 CSV with
// header x_0..x_{d-1},y_0..y_{2d-1}[,c_0..c_{d-1},n_0..n_{d-1}], doubles
// formatted for exact round-trip, and a JSON sidecar <path>.meta.json with
// {domain, d, n, seed, with_latents, schema_version}.
//
// Generation draws each row from its own derived RNG stream ("row", i), so
// files are byte-identical for a fixed seed no matter how rows are scheduled.

#include "ctfgen/io.hpp"
#include "ctfgen/scm_oracle.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ctfgen {

constexpr int kDatasetSchemaVersion = 1;

struct Dataset {
    Domain domain = Domain::source;
    std::size_t d = 0;
    std::uint64_t seed = 0;
    bool with_latents = false;
    Tensor x;  // n x d
    Tensor y;  // n x 2d
    Tensor c;  // n x d when with_latents
    Tensor n;  // n x d when with_latents

    std::size_t size() const { return x.ndim() == 2 ? x.rows() : 0; }

    ObservationalSample row(std::size_t i) const {
        ObservationalSample s;
        s.x = slice_row(x, i);
        s.y = slice_row(y, i);
        if (with_latents) {
            s.c = slice_row(c, i);
            s.n = slice_row(n, i);
        }
        return s;
    }

private:
    static Tensor slice_row(const Tensor& m, std::size_t i) {
        Tensor out({m.cols()});
        for (std::size_t k = 0; k < m.cols(); ++k) out[k] = m.at(i, k);
        return out;
    }
};

inline Dataset generate_dataset(Domain domain, std::size_t n, std::size_t d, std::uint64_t seed,
                                bool with_latents) {
    if (n == 0) throw std::invalid_argument("generate_dataset: n must be >= 1");
    Dataset ds;
    ds.domain = domain;
    ds.d = d;
    ds.seed = seed;
    ds.with_latents = with_latents;
    ds.x = Tensor({n, d});
    ds.y = Tensor({n, 2 * d});
    if (with_latents) {
        ds.c = Tensor({n, d});
        ds.n = Tensor({n, d});
    }
    const RootRng root(seed);
    const std::string stream = std::string("dataset/") + domain_name(domain);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = root.stream(stream, i);
        const LatentTriple lat = sample_prior(domain, d, rng);
        const Tensor y = domain == Domain::source ? source_mechanism(lat.x, lat.c, lat.n)
                                                  : target_mechanism(lat.x, lat.c, lat.n);
        for (std::size_t k = 0; k < d; ++k) ds.x.at(i, k) = lat.x[k];
        for (std::size_t k = 0; k < 2 * d; ++k) ds.y.at(i, k) = y[k];
        if (with_latents) {
            for (std::size_t k = 0; k < d; ++k) {
                ds.c.at(i, k) = lat.c[k];
                ds.n.at(i, k) = lat.n[k];
            }
        }
    }
    return ds;
}

namespace detail {
inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}
}  // namespace detail

inline std::string dataset_csv_header(std::size_t d, bool with_latents) {
    std::string h;
    for (std::size_t k = 0; k < d; ++k) h += "x_" + std::to_string(k) + ",";
    for (std::size_t k = 0; k < 2 * d; ++k) h += "y_" + std::to_string(k) + ",";
    if (with_latents) {
        for (std::size_t k = 0; k < d; ++k) h += "c_" + std::to_string(k) + ",";
        for (std::size_t k = 0; k < d; ++k) h += "n_" + std::to_string(k) + ",";
    }
    h.pop_back();
    return h;
}

inline std::filesystem::path dataset_sidecar_path(const std::filesystem::path& csv_path) {
    return std::filesystem::path(csv_path.string() + ".meta.json");
}

inline void write_dataset(const std::filesystem::path& csv_path, const Dataset& ds) {
    std::string out = dataset_csv_header(ds.d, ds.with_latents) + "\n";
    const std::size_t n = ds.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < ds.d; ++k) out += io::format_double(ds.x.at(i, k)) + ",";
        for (std::size_t k = 0; k < 2 * ds.d; ++k) out += io::format_double(ds.y.at(i, k)) + ",";
        if (ds.with_latents) {
            for (std::size_t k = 0; k < ds.d; ++k) out += io::format_double(ds.c.at(i, k)) + ",";
            for (std::size_t k = 0; k < ds.d; ++k) out += io::format_double(ds.n.at(i, k)) + ",";
        }
        out.back() = '\n';
    }
    io::write_file(csv_path, out);

    const nlohmann::json meta = {
        {"schema_version", kDatasetSchemaVersion}, {"domain", domain_name(ds.domain)},
        {"d", ds.d},                               {"n", n},
        {"seed", ds.seed},                         {"with_latents", ds.with_latents},
    };
    io::write_file(dataset_sidecar_path(csv_path), meta.dump(2) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& csv_path) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(io::read_file(dataset_sidecar_path(csv_path)));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_dataset: bad sidecar for " + csv_path.string() + ": " + e.what());
    }
    const int version = meta.at("schema_version").get<int>();
    if (version != kDatasetSchemaVersion) {
        throw std::runtime_error("load_dataset: schema_version " + std::to_string(version) + " != expected " +
                                 std::to_string(kDatasetSchemaVersion));
    }
    Dataset ds;
    ds.domain = domain_from_string(meta.at("domain").get<std::string>());
    ds.d = meta.at("d").get<std::size_t>();
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.with_latents = meta.at("with_latents").get<bool>();
    const std::size_t n = meta.at("n").get<std::size_t>();

    const std::string content = io::read_file(csv_path);
    const std::size_t expect_fields = ds.with_latents ? 5 * ds.d : 3 * ds.d;
    ds.x = Tensor({n, ds.d});
    ds.y = Tensor({n, 2 * ds.d});
    if (ds.with_latents) {
        ds.c = Tensor({n, ds.d});
        ds.n = Tensor({n, ds.d});
    }

    std::size_t pos = 0;
    std::size_t row = 0;
    bool header_seen = false;
    while (pos < content.size()) {
        std::size_t eol = content.find('\n', pos);
        if (eol == std::string::npos) eol = content.size();
        const std::string_view line(content.data() + pos, eol - pos);
        pos = eol + 1;
        if (line.empty()) continue;
        if (!header_seen) {
            header_seen = true;
            if (line != dataset_csv_header(ds.d, ds.with_latents)) {
                throw std::runtime_error("load_dataset: unexpected CSV header in " + csv_path.string());
            }
            continue;
        }
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != expect_fields) {
            throw std::runtime_error("load_dataset: row " + std::to_string(row) + " has " +
                                     std::to_string(fields.size()) + " fields, expected " +
                                     std::to_string(expect_fields));
        }
        if (row >= n) throw std::runtime_error("load_dataset: more rows than sidecar n");
        std::size_t f = 0;
        for (std::size_t k = 0; k < ds.d; ++k) ds.x.at(row, k) = io::parse_double(fields[f++]);
        for (std::size_t k = 0; k < 2 * ds.d; ++k) ds.y.at(row, k) = io::parse_double(fields[f++]);
        if (ds.with_latents) {
            for (std::size_t k = 0; k < ds.d; ++k) ds.c.at(row, k) = io::parse_double(fields[f++]);
            for (std::size_t k = 0; k < ds.d; ++k) ds.n.at(row, k) = io::parse_double(fields[f++]);
        }
        ++row;
    }
    if (row != n) {
        throw std::runtime_error("load_dataset: expected " + std::to_string(n) + " rows, found " +
                                 std::to_string(row));
    }
    return ds;
}

}  // namespace ctfgen
