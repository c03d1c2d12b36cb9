#include "fedstab/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "fedstab/error.hpp"

namespace fedstab {

std::size_t FederatedDataset::total_size() const {
    std::size_t n = 0;
    for (const auto& c : clients) n += c.size();
    return n;
}

std::vector<double> FederatedDataset::weights() const {
    double n = static_cast<double>(total_size());
    std::vector<double> p;
    p.reserve(clients.size());
    for (const auto& c : clients) p.push_back(static_cast<double>(c.size()) / n);
    return p;
}

void DataGenSpec::validate() const {
    if (num_classes < 2) throw std::invalid_argument("data spec: need at least 2 classes");
    if (feature_dim < 1) throw std::invalid_argument("data spec: feature_dim must be positive");
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("data spec: rho must lie in [0,1]");
    if (noise_scale < 0.0) throw std::invalid_argument("data spec: noise_scale must be >= 0");
    if (samples_per_client.empty()) throw std::invalid_argument("data spec: no clients");
    for (std::size_t n : samples_per_client)
        if (n == 0) throw std::invalid_argument("data spec: every client needs at least one sample");
    if (client_classes.size() != samples_per_client.size())
        throw std::invalid_argument("data spec: one class pair per client required");
    for (const auto& pr : client_classes) {
        if (pr[0] < 0 || pr[0] >= num_classes || pr[1] < 0 || pr[1] >= num_classes)
            throw std::invalid_argument("data spec: class pair out of range");
        // equal entries are allowed: (c, c) makes the client's rho-part a point
        // mass on c, the degenerate case the stability suites rely on
    }
    if (class_means.size() != static_cast<std::size_t>(num_classes))
        throw std::invalid_argument("data spec: one mean per class required");
    for (const auto& m : class_means) {
        if (m.size() != static_cast<std::size_t>(feature_dim))
            throw std::invalid_argument("data spec: class mean has wrong dimension");
        if (!all_finite(m)) throw std::invalid_argument("data spec: class mean not finite");
        double nm = norm2(m);
        if (!(nm > 0.0 && nm <= 1.0 + 1e-9))
            throw std::invalid_argument("data spec: class means must be nonzero unit-ball vectors");
    }
}

DataGenSpec DataGenSpec::make_default(int clients, int num_classes, int feature_dim, double rho,
                                      std::size_t samples_per_client, double noise_scale) {
    DataGenSpec s;
    s.num_classes = num_classes;
    s.feature_dim = feature_dim;
    s.rho = rho;
    s.noise_scale = noise_scale;
    s.samples_per_client.assign(static_cast<std::size_t>(clients), samples_per_client);
    for (int i = 0; i < clients; ++i)
        s.client_classes.push_back({i % num_classes, (i + 1) % num_classes});
    s.class_means.reserve(static_cast<std::size_t>(num_classes));
    if (feature_dim >= num_classes) {
        for (int c = 0; c < num_classes; ++c) {
            Vec m(static_cast<std::size_t>(feature_dim), 0.0);
            m[static_cast<std::size_t>(c)] = 1.0;
            s.class_means.push_back(std::move(m));
        }
    } else {
        // Means are part of the spec's identity, so they come from a fixed
        // constant seed, not from any experiment seed.
        Rng r(0x4d45414e53454544ULL);
        for (int c = 0; c < num_classes; ++c) {
            Vec m(static_cast<std::size_t>(feature_dim));
            for (auto& v : m) v = r.normal();
            double nm = norm2(m);
            scale(1.0 / nm, m);
            s.class_means.push_back(std::move(m));
        }
    }
    s.validate();
    return s;
}

std::vector<double> label_marginal(const DataGenSpec& spec, int client) {
    if (client < 0 || client >= spec.clients()) throw std::invalid_argument("label_marginal: bad client index");
    std::vector<double> pi(static_cast<std::size_t>(spec.num_classes),
                           (1.0 - spec.rho) / spec.num_classes);
    const auto& pr = spec.client_classes[static_cast<std::size_t>(client)];
    pi[static_cast<std::size_t>(pr[0])] += spec.rho * 0.5;
    pi[static_cast<std::size_t>(pr[1])] += spec.rho * 0.5;
    return pi;
}

static std::vector<double> client_weights(const DataGenSpec& spec) {
    double n = 0.0;
    for (std::size_t ni : spec.samples_per_client) n += static_cast<double>(ni);
    std::vector<double> p;
    p.reserve(spec.samples_per_client.size());
    for (std::size_t ni : spec.samples_per_client) p.push_back(static_cast<double>(ni) / n);
    return p;
}

std::vector<double> global_marginal(const DataGenSpec& spec) {
    auto p = client_weights(spec);
    std::vector<double> bar(static_cast<std::size_t>(spec.num_classes), 0.0);
    for (int i = 0; i < spec.clients(); ++i) {
        auto pi = label_marginal(spec, i);
        for (std::size_t c = 0; c < bar.size(); ++c) bar[c] += p[static_cast<std::size_t>(i)] * pi[c];
    }
    return bar;
}

HeterogeneityProfile total_variation_labels(const DataGenSpec& spec) {
    spec.validate();
    HeterogeneityProfile prof;
    prof.pbar = global_marginal(spec);
    auto p = client_weights(spec);
    prof.d.reserve(static_cast<std::size_t>(spec.clients()));
    for (int i = 0; i < spec.clients(); ++i) {
        auto pi = label_marginal(spec, i);
        double tv = 0.0;
        for (std::size_t c = 0; c < pi.size(); ++c) tv += std::abs(pi[c] - prof.pbar[c]);
        tv *= 0.5;
        prof.d.push_back(tv);
        prof.d_max = std::max(prof.d_max, tv);
        prof.d_tilde += p[static_cast<std::size_t>(i)] * tv * tv;
    }
    return prof;
}

static void shrink_unit(Vec& x) {
    double n = norm2(x);
    if (n > 1.0) scale(1.0 / n, x);
}

static Sample draw_with_label(const DataGenSpec& spec, int label, Rng& rng) {
    Sample z;
    z.label = label;
    z.x = spec.class_means[static_cast<std::size_t>(label)];
    for (auto& v : z.x) v += spec.noise_scale * rng.normal();
    shrink_unit(z.x);
    return z;
}

Sample draw_sample(const DataGenSpec& spec, int client, Rng& rng) {
    const auto& pr = spec.client_classes[static_cast<std::size_t>(client)];
    int label;
    if (rng.uniform() < spec.rho)
        label = pr[rng.below(2)];
    else
        label = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_classes)));
    return draw_with_label(spec, label, rng);
}

ClientDataset draw_global(const DataGenSpec& spec, std::size_t count, Rng& rng) {
    spec.validate();
    auto p = client_weights(spec);
    ClientDataset out;
    out.samples.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        double u = rng.uniform();
        int i = 0;
        double acc = p[0];
        while (u >= acc && i + 1 < spec.clients()) acc += p[static_cast<std::size_t>(++i)];
        out.samples.push_back(draw_sample(spec, i, rng));
    }
    return out;
}

FederatedDataset generate_federation(const DataGenSpec& spec, Rng& rng) {
    spec.validate();
    FederatedDataset fed;
    fed.clients.resize(spec.samples_per_client.size());
    for (int i = 0; i < spec.clients(); ++i) {
        auto& c = fed.clients[static_cast<std::size_t>(i)];
        c.samples.reserve(spec.samples_per_client[static_cast<std::size_t>(i)]);
        for (std::size_t j = 0; j < spec.samples_per_client[static_cast<std::size_t>(i)]; ++j)
            c.samples.push_back(draw_sample(spec, i, rng));
    }
    return fed;
}

Sample draw_replacement(const DataGenSpec& spec, int client, Rng& rng) {
    if (client < 0 || client >= spec.clients()) throw std::invalid_argument("draw_replacement: bad client index");
    return draw_sample(spec, client, rng);
}

FederatedDataset make_neighbor(const FederatedDataset& fed, const NeighborSpec& nspec) {
    if (nspec.client < 0 || static_cast<std::size_t>(nspec.client) >= fed.clients.size())
        throw std::invalid_argument("make_neighbor: bad client index");
    const auto& cd = fed.clients[static_cast<std::size_t>(nspec.client)];
    if (nspec.position >= cd.size()) throw std::invalid_argument("make_neighbor: bad sample position");
    if (nspec.replacement.x.empty() || !all_finite(nspec.replacement.x))
        throw std::invalid_argument("make_neighbor: bad replacement sample");
    FederatedDataset twin = fed;
    twin.clients[static_cast<std::size_t>(nspec.client)].samples[nspec.position] = nspec.replacement;
    return twin;
}

// ---- IDX ----

namespace {

std::uint32_t read_be32(std::ifstream& f, const std::string& path, std::size_t& offset) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (f.gcount() != 4) throw Error(path + ": truncated at byte " + std::to_string(offset));
    offset += 4;
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace

ClientDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw Error("cannot open " + images_path);
    std::size_t off = 0;
    std::uint32_t magic = read_be32(fi, images_path, off);
    if (magic != 2051)
        throw Error(images_path + ": bad image magic " + std::to_string(magic) + " at byte 0, expected 2051");
    std::uint32_t count = read_be32(fi, images_path, off);
    std::uint32_t rows = read_be32(fi, images_path, off);
    std::uint32_t cols = read_be32(fi, images_path, off);
    if (rows == 0 || cols == 0) throw Error(images_path + ": zero image dimensions");
    std::size_t dim = static_cast<std::size_t>(rows) * cols;

    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw Error("cannot open " + labels_path);
    std::size_t loff = 0;
    std::uint32_t lmagic = read_be32(fl, labels_path, loff);
    if (lmagic != 2049)
        throw Error(labels_path + ": bad label magic " + std::to_string(lmagic) + " at byte 0, expected 2049");
    std::uint32_t lcount = read_be32(fl, labels_path, loff);
    if (lcount != count)
        throw Error(labels_path + ": label count " + std::to_string(lcount) + " != image count " +
                    std::to_string(count));

    ClientDataset out;
    out.samples.reserve(count);
    std::vector<unsigned char> buf(dim);
    for (std::uint32_t k = 0; k < count; ++k) {
        fi.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
        if (fi.gcount() != static_cast<std::streamsize>(dim))
            throw Error(images_path + ": truncated at byte " + std::to_string(off + fi.gcount()));
        off += dim;
        unsigned char lb;
        fl.read(reinterpret_cast<char*>(&lb), 1);
        if (fl.gcount() != 1) throw Error(labels_path + ": truncated at byte " + std::to_string(loff));
        loff += 1;
        if (lb > 9)
            throw Error(labels_path + ": label " + std::to_string(static_cast<int>(lb)) + " at byte " +
                        std::to_string(loff - 1) + " out of range [0,9]");
        Sample z;
        z.label = static_cast<int>(lb);
        z.x.resize(dim);
        for (std::size_t d = 0; d < dim; ++d) z.x[d] = static_cast<double>(buf[d]) / 255.0;
        shrink_unit(z.x);
        out.samples.push_back(std::move(z));
    }
    return out;
}

FederatedDataset federate_pool(const ClientDataset& pool, const DataGenSpec& spec, Rng& rng) {
    spec.validate();
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(spec.num_classes));
    for (std::size_t k = 0; k < pool.size(); ++k) {
        int lb = pool.samples[k].label;
        if (lb < 0 || lb >= spec.num_classes) throw Error("federate_pool: pool label out of spec range");
        by_class[static_cast<std::size_t>(lb)].push_back(k);
    }
    for (auto& g : by_class) {  // Fisher-Yates so pool order carries no signal
        for (std::size_t k = g.size(); k > 1; --k) std::swap(g[k - 1], g[rng.below(k)]);
    }
    std::vector<std::size_t> used(static_cast<std::size_t>(spec.num_classes), 0);
    FederatedDataset fed;
    fed.clients.resize(spec.samples_per_client.size());
    for (int i = 0; i < spec.clients(); ++i) {
        const auto& pr = spec.client_classes[static_cast<std::size_t>(i)];
        auto& c = fed.clients[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < spec.samples_per_client[static_cast<std::size_t>(i)]; ++j) {
            int label;
            if (rng.uniform() < spec.rho)
                label = pr[rng.below(2)];
            else
                label = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_classes)));
            auto& g = by_class[static_cast<std::size_t>(label)];
            auto& u = used[static_cast<std::size_t>(label)];
            if (u >= g.size())
                throw Error("federate_pool: class " + std::to_string(label) + " exhausted in pool");
            c.samples.push_back(pool.samples[g[u++]]);
        }
    }
    return fed;
}

}  // namespace fedstab
