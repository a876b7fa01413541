#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fimp/errors.hpp"
#include "fimp/rng.hpp"

namespace fimp {

/// One data point: optional per-modality feature vectors plus a multi-label
/// target. At least one modality must be present.
struct Sample {
    std::optional<std::vector<double>> image_features;
    std::optional<std::vector<double>> text_features;
    std::vector<std::uint8_t> labels;

    bool has_image() const { return image_features.has_value(); }
    bool has_text() const { return text_features.has_value(); }
};

/// Shared-latent synthetic generator. Each sample draws a shared latent s
/// and per-modality private latents p_m; modality latents are
/// rho*s + sqrt(1-rho^2)*p_m, observed through fixed random projections with
/// a tanh squash plus Gaussian noise. Labels are sign tests of s against
/// fixed random hyperplanes, so the label signal lives entirely in the
/// shared factor and cross-modal predictability is controlled by rho alone.
struct GeneratorConfig {
    std::size_t latent_dim = 16;
    std::size_t d_image = 32;
    std::size_t d_text = 32;
    std::size_t label_count = 5;
    double noise_sigma = 0.1;
    double modality_correlation = 0.9;
    std::uint64_t seed = 1;

    void validate() const {
        if (latent_dim == 0 || d_image == 0 || d_text == 0 || label_count == 0)
            throw ConfigError("generator: dimensions must be positive");
        if (!(modality_correlation >= 0.0 && modality_correlation <= 1.0))
            throw ConfigError("generator: modality_correlation must lie in [0,1]");
        if (!(noise_sigma >= 0.0)) throw ConfigError("generator: noise_sigma must be >= 0");
    }
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
    std::vector<std::size_t> test_indices;
    std::size_t d_image = 0;
    std::size_t d_text = 0;
    std::size_t label_count = 0;
};

namespace detail {

inline void shuffle_indices(std::vector<std::size_t>& idx, RngStream& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.next_below(i)]);
}

/// 70/15/15 split over a permutation; val and test get floor(0.15 n) each.
inline void assign_splits(Dataset& ds, std::vector<std::size_t> order) {
    const std::size_t n = order.size();
    const std::size_t n_val = n * 15 / 100;
    const std::size_t n_test = n * 15 / 100;
    const std::size_t n_train = n - n_val - n_test;
    ds.train_indices.assign(order.begin(), order.begin() + n_train);
    ds.val_indices.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    ds.test_indices.assign(order.begin() + n_train + n_val, order.end());
}

} // namespace detail

inline Dataset generate_dataset(const GeneratorConfig& cfg, std::size_t n) {
    cfg.validate();
    if (n == 0) throw ConfigError("generate_dataset: n must be >= 1");

    const std::size_t k = cfg.latent_dim;
    const double rho = cfg.modality_correlation;
    const double private_scale = std::sqrt(1.0 - rho * rho);
    const double proj_scale = 1.0 / std::sqrt(static_cast<double>(k));

    auto make_projection = [&](const char* purpose, std::size_t rows) {
        RngStream rng = RngStream::derive(cfg.seed, purpose);
        std::vector<double> m(rows * k);
        for (double& v : m) v = proj_scale * rng.next_normal();
        return m;
    };
    const std::vector<double> proj_image = make_projection("data.proj.image", cfg.d_image);
    const std::vector<double> proj_text = make_projection("data.proj.text", cfg.d_text);

    // L fixed random unit hyperplanes through the origin.
    std::vector<double> hyperplanes(cfg.label_count * k);
    {
        RngStream rng = RngStream::derive(cfg.seed, "data.labels");
        for (std::size_t l = 0; l < cfg.label_count; ++l) {
            double sq = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                double v = rng.next_normal();
                hyperplanes[l * k + j] = v;
                sq += v * v;
            }
            double norm = std::sqrt(sq);
            for (std::size_t j = 0; j < k; ++j) hyperplanes[l * k + j] /= norm;
        }
    }

    Dataset ds;
    ds.d_image = cfg.d_image;
    ds.d_text = cfg.d_text;
    ds.label_count = cfg.label_count;
    ds.samples.reserve(n);

    std::vector<double> shared(k), latent(k);
    for (std::size_t i = 0; i < n; ++i) {
        RngStream rng = RngStream::derive(cfg.seed, "data.sample", i);
        for (double& v : shared) v = rng.next_normal();

        Sample sample;
        auto observe = [&](const std::vector<double>& proj, std::size_t d) {
            for (std::size_t j = 0; j < k; ++j)
                latent[j] = rho * shared[j] + private_scale * rng.next_normal();
            std::vector<double> x(d);
            for (std::size_t r = 0; r < d; ++r) {
                double acc = 0.0;
                for (std::size_t j = 0; j < k; ++j) acc += proj[r * k + j] * latent[j];
                x[r] = std::tanh(acc);
            }
            for (std::size_t r = 0; r < d; ++r) x[r] += cfg.noise_sigma * rng.next_normal();
            return x;
        };
        sample.image_features = observe(proj_image, cfg.d_image);
        sample.text_features = observe(proj_text, cfg.d_text);
        sample.labels.resize(cfg.label_count);
        for (std::size_t l = 0; l < cfg.label_count; ++l) {
            double dot = 0.0;
            for (std::size_t j = 0; j < k; ++j) dot += hyperplanes[l * k + j] * shared[j];
            sample.labels[l] = dot > 0.0 ? 1 : 0;
        }
        ds.samples.push_back(std::move(sample));
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    RngStream split_rng = RngStream::derive(cfg.seed, "data.split");
    detail::shuffle_indices(order, split_rng);
    detail::assign_splits(ds, std::move(order));
    return ds;
}

// ---------------------------------------------------------------------------
// Client partitioning
// ---------------------------------------------------------------------------

enum class ModalityProfile { ImageOnly, TextOnly, Multimodal };

inline std::string profile_name(ModalityProfile p) {
    switch (p) {
        case ModalityProfile::ImageOnly: return "image-only";
        case ModalityProfile::TextOnly: return "text-only";
        case ModalityProfile::Multimodal: return "multimodal";
    }
    return "?";
}

/// Population spec in I:T:M form (counts of image-only, text-only and
/// multimodal clients).
struct PartitionSpec {
    std::size_t image_only = 0;
    std::size_t text_only = 0;
    std::size_t multimodal = 0;

    std::size_t total() const { return image_only + text_only + multimodal; }

    static PartitionSpec parse(const std::string& text) {
        PartitionSpec spec;
        std::size_t* fields[3] = {&spec.image_only, &spec.text_only, &spec.multimodal};
        std::size_t pos = 0;
        for (int f = 0; f < 3; ++f) {
            std::size_t end = f < 2 ? text.find(':', pos) : text.size();
            if (end == std::string::npos || end == pos)
                throw ConfigError("partition: malformed spec '" + text + "' (expected I:T:M)");
            for (std::size_t i = pos; i < end; ++i)
                if (!std::isdigit(static_cast<unsigned char>(text[i])))
                    throw ConfigError("partition: malformed spec '" + text + "' (expected I:T:M)");
            *fields[f] = static_cast<std::size_t>(std::stoull(text.substr(pos, end - pos)));
            pos = end + 1;
        }
        if (spec.total() == 0)
            throw ConfigError("partition: spec '" + text + "' has zero clients");
        return spec;
    }

    std::string str() const {
        return std::to_string(image_only) + ":" + std::to_string(text_only) + ":" +
               std::to_string(multimodal);
    }
};

/// One federated participant: its modality profile, its slice of the train
/// split, and (in heterogeneous runs) the label weights its slice was drawn
/// with.
struct ClientSpec {
    std::size_t id = 0;
    ModalityProfile profile = ModalityProfile::Multimodal;
    std::vector<std::size_t> sample_indices;
    std::optional<std::vector<double>> label_skew;
};

/// Splits the train set into disjoint equal-size client partitions.
/// Homogeneous: one shuffled pass, sequential blocks. Heterogeneous:
/// unimodal clients draw their slice by Dirichlet(0.5) label-affinity
/// weights (Efraimidis-Spirakis weighted sampling without replacement);
/// multimodal clients then draw uniformly from the remainder.
inline std::vector<ClientSpec> partition_clients(const Dataset& dataset,
                                                 const std::string& spec_string,
                                                 std::size_t per_client,
                                                 bool heterogeneous,
                                                 std::uint64_t seed) {
    const PartitionSpec spec = PartitionSpec::parse(spec_string);
    if (per_client == 0) throw ConfigError("partition: per-client sample count must be >= 1");
    if (spec.total() * per_client > dataset.train_indices.size())
        throw ConfigError("partition: need " + std::to_string(spec.total() * per_client) +
                          " train samples for " + spec_string + " x " +
                          std::to_string(per_client) + ", have " +
                          std::to_string(dataset.train_indices.size()));

    std::vector<ClientSpec> clients(spec.total());
    for (std::size_t c = 0; c < clients.size(); ++c) {
        clients[c].id = c;
        clients[c].profile = c < spec.image_only ? ModalityProfile::ImageOnly
                             : c < spec.image_only + spec.text_only
                                 ? ModalityProfile::TextOnly
                                 : ModalityProfile::Multimodal;
    }

    std::vector<std::size_t> pool = dataset.train_indices;
    RngStream shuffle_rng = RngStream::derive(seed, "partition.shuffle");
    detail::shuffle_indices(pool, shuffle_rng);

    if (!heterogeneous) {
        for (std::size_t c = 0; c < clients.size(); ++c)
            clients[c].sample_indices.assign(pool.begin() + c * per_client,
                                             pool.begin() + (c + 1) * per_client);
        return clients;
    }

    const std::size_t label_count = dataset.label_count;
    for (auto& client : clients) {
        if (client.profile == ModalityProfile::Multimodal) continue;
        RngStream dir_rng = RngStream::derive(seed, "partition.dirichlet", client.id);
        std::vector<double> skew(label_count);
        double total = 0.0;
        for (double& w : skew) {
            w = dir_rng.next_gamma(0.5);
            total += w;
        }
        for (double& w : skew) w /= total;
        client.label_skew = skew;

        // Efraimidis-Spirakis: larger log(u)/w wins the reservoir.
        RngStream pick_rng = RngStream::derive(seed, "partition.weighted", client.id);
        std::vector<std::pair<double, std::size_t>> keyed(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) {
            const Sample& s = dataset.samples[pool[i]];
            double w = 1e-3;
            for (std::size_t l = 0; l < label_count; ++l)
                if (s.labels[l]) w += skew[l];
            double u = pick_rng.next_double();
            if (u <= 0.0) u = 0x1.0p-53;
            keyed[i] = {std::log(u) / w, i};
        }
        std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(per_client),
                          keyed.end(), [](const auto& a, const auto& b) {
                              return a.first > b.first || (a.first == b.first && a.second < b.second);
                          });
        std::vector<std::size_t> taken_positions(per_client);
        for (std::size_t i = 0; i < per_client; ++i) taken_positions[i] = keyed[i].second;
        std::sort(taken_positions.begin(), taken_positions.end());
        client.sample_indices.reserve(per_client);
        for (std::size_t posn : taken_positions) client.sample_indices.push_back(pool[posn]);
        for (auto it = taken_positions.rbegin(); it != taken_positions.rend(); ++it)
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(*it));
    }

    RngStream rest_rng = RngStream::derive(seed, "partition.multimodal");
    detail::shuffle_indices(pool, rest_rng);
    std::size_t offset = 0;
    for (auto& client : clients) {
        if (client.profile != ModalityProfile::Multimodal) continue;
        client.sample_indices.assign(pool.begin() + offset, pool.begin() + offset + per_client);
        offset += per_client;
    }
    return clients;
}

/// Materializes a client's local data, dropping the modalities its profile
/// does not expose.
inline std::vector<Sample> client_samples(const Dataset& dataset, const ClientSpec& client) {
    std::vector<Sample> out;
    out.reserve(client.sample_indices.size());
    for (std::size_t idx : client.sample_indices) {
        Sample s = dataset.samples[idx];
        if (client.profile == ModalityProfile::ImageOnly) s.text_features.reset();
        if (client.profile == ModalityProfile::TextOnly) s.image_features.reset();
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Feature file format (FIMP1)
// ---------------------------------------------------------------------------
// magic "FIMP1\n"; ASCII header line "n d_I d_T L\n"; then per sample:
// one modality-mask byte (bit0 image, bit1 text), L label bytes (0/1),
// then the present modality rows as little-endian float64 (image first).

inline void save_feature_file(const std::string& path, const std::vector<Sample>& samples,
                              std::size_t d_image, std::size_t d_text,
                              std::size_t label_count) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << "FIMP1\n";
    f << samples.size() << " " << d_image << " " << d_text << " " << label_count << "\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        if (!s.has_image() && !s.has_text())
            throw ValueError("feature file: sample " + std::to_string(i) + " has no modality");
        if (s.labels.size() != label_count ||
            (s.has_image() && s.image_features->size() != d_image) ||
            (s.has_text() && s.text_features->size() != d_text))
            throw ValueError("feature file: sample " + std::to_string(i) +
                             " disagrees with header dimensions");
        std::uint8_t mask = (s.has_image() ? 1 : 0) | (s.has_text() ? 2 : 0);
        f.write(reinterpret_cast<const char*>(&mask), 1);
        for (std::uint8_t l : s.labels) {
            if (l > 1) throw ValueError("feature file: labels must be 0/1");
            f.write(reinterpret_cast<const char*>(&l), 1);
        }
        if (s.has_image())
            f.write(reinterpret_cast<const char*>(s.image_features->data()),
                    static_cast<std::streamsize>(d_image * sizeof(double)));
        if (s.has_text())
            f.write(reinterpret_cast<const char*>(s.text_features->data()),
                    static_cast<std::streamsize>(d_text * sizeof(double)));
    }
    if (!f) throw IoError("write failed for '" + path + "'");
}

struct LoadedFeatureFile {
    std::vector<Sample> samples;
    std::size_t d_image = 0;
    std::size_t d_text = 0;
    std::size_t label_count = 0;
};

inline LoadedFeatureFile load_feature_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    std::string content((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    const std::string magic = "FIMP1\n";
    if (content.size() < magic.size() || content.compare(0, magic.size(), magic) != 0)
        throw IoError("feature file: malformed header (bad magic) in '" + path + "'");
    std::size_t header_end = content.find('\n', magic.size());
    if (header_end == std::string::npos)
        throw IoError("feature file: malformed header (missing header line)");
    std::istringstream header(content.substr(magic.size(), header_end - magic.size()));
    long long n = -1, d_image = -1, d_text = -1, label_count = -1;
    std::string extra;
    if (!(header >> n >> d_image >> d_text >> label_count) || (header >> extra) || n < 0 ||
        d_image <= 0 || d_text <= 0 || label_count <= 0)
        throw IoError("feature file: malformed header line");

    LoadedFeatureFile out;
    out.d_image = static_cast<std::size_t>(d_image);
    out.d_text = static_cast<std::size_t>(d_text);
    out.label_count = static_cast<std::size_t>(label_count);

    std::size_t pos = header_end + 1;
    auto need = [&](std::size_t bytes, std::size_t sample_idx) {
        if (pos + bytes > content.size())
            throw IoError("feature file: truncated payload at sample " +
                          std::to_string(sample_idx));
    };
    for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
        need(1 + out.label_count, i);
        std::uint8_t mask = static_cast<std::uint8_t>(content[pos++]);
        if (mask == 0 || mask > 3)
            throw IoError("feature file: invalid modality mask at sample " + std::to_string(i));
        Sample s;
        s.labels.resize(out.label_count);
        for (std::size_t l = 0; l < out.label_count; ++l) {
            std::uint8_t b = static_cast<std::uint8_t>(content[pos++]);
            if (b > 1)
                throw IoError("feature file: invalid label byte at sample " + std::to_string(i));
            s.labels[l] = b;
        }
        auto read_row = [&](std::size_t d) {
            need(d * sizeof(double), i);
            std::vector<double> row(d);
            std::memcpy(row.data(), content.data() + pos, d * sizeof(double));
            pos += d * sizeof(double);
            return row;
        };
        if (mask & 1) s.image_features = read_row(out.d_image);
        if (mask & 2) s.text_features = read_row(out.d_text);
        out.samples.push_back(std::move(s));
    }
    if (pos != content.size())
        throw IoError("feature file: trailing bytes after last sample");
    return out;
}

/// Builds a Dataset around externally supplied samples. Validation and test
/// splits are always fully multimodal, so they are drawn from the
/// multimodal subset; everything else trains.
inline Dataset dataset_from_samples(std::vector<Sample> samples, std::size_t d_image,
                                    std::size_t d_text, std::size_t label_count,
                                    std::uint64_t seed) {
    Dataset ds;
    ds.samples = std::move(samples);
    ds.d_image = d_image;
    ds.d_text = d_text;
    ds.label_count = label_count;

    std::vector<std::size_t> multimodal, unimodal;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        (ds.samples[i].has_image() && ds.samples[i].has_text() ? multimodal : unimodal)
            .push_back(i);
    RngStream rng = RngStream::derive(seed, "data.split");
    detail::shuffle_indices(multimodal, rng);

    const std::size_t n = ds.samples.size();
    const std::size_t n_val = std::min(n * 15 / 100, multimodal.size() / 2);
    const std::size_t n_test = std::min(n * 15 / 100, multimodal.size() - n_val);
    ds.val_indices.assign(multimodal.begin(), multimodal.begin() + n_val);
    ds.test_indices.assign(multimodal.begin() + n_val, multimodal.begin() + n_val + n_test);
    ds.train_indices.assign(multimodal.begin() + n_val + n_test, multimodal.end());
    ds.train_indices.insert(ds.train_indices.end(), unimodal.begin(), unimodal.end());
    std::sort(ds.train_indices.begin(), ds.train_indices.end());
    return ds;
}

} // namespace fimp
