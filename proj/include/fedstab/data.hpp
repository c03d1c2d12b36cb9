#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fedstab/rng.hpp"
#include "fedstab/vec.hpp"

namespace fedstab {

struct Sample {
    Vec x;      // features, norm kept <= 1 at construction
    int label;  // in [0, num_classes)
};

struct ClientDataset {
    std::vector<Sample> samples;
    std::size_t size() const { return samples.size(); }
};

struct FederatedDataset {
    std::vector<ClientDataset> clients;
    std::size_t total_size() const;
    // p_i = n_i / n
    std::vector<double> weights() const;
};

// Per-client label law: (1 - rho) * Uniform(classes) + rho * Uniform(assigned pair).
// rho = 0 is i.i.d. across clients, rho = 1 concentrates each client on its own
// two classes. Class-conditional feature laws are shared by every client, so
// label marginals carry all the heterogeneity and the divergence profile below
// is exact rather than estimated.
struct DataGenSpec {
    int num_classes = 10;
    int feature_dim = 10;
    double rho = 0.0;
    std::vector<std::size_t> samples_per_client;      // n_i
    std::vector<std::array<int, 2>> client_classes;   // assigned pair per client
    std::vector<Vec> class_means;                     // unit vectors, one per class
    double noise_scale = 0.3;

    int clients() const { return static_cast<int>(samples_per_client.size()); }
    void validate() const;

    // Ring pairing (i mod C, (i+1) mod C) and deterministic unit means:
    // one-hot when feature_dim >= num_classes, otherwise fixed-seed directions.
    static DataGenSpec make_default(int clients, int num_classes, int feature_dim, double rho,
                                    std::size_t samples_per_client, double noise_scale = 0.3);
};

// Exact total-variation distances between client label marginals and the
// global mixture marginal.
struct HeterogeneityProfile {
    std::vector<double> d;     // D_i = d_TV(P_i, P)
    double d_max = 0.0;
    double d_tilde = 0.0;      // sum_i p_i * D_i^2
    std::vector<double> pbar;  // global label marginal
};

struct NeighborSpec {
    int client = 0;
    std::size_t position = 0;
    Sample replacement;
};

std::vector<double> label_marginal(const DataGenSpec& spec, int client);
std::vector<double> global_marginal(const DataGenSpec& spec);
HeterogeneityProfile total_variation_labels(const DataGenSpec& spec);

Sample draw_sample(const DataGenSpec& spec, int client, Rng& rng);
ClientDataset draw_global(const DataGenSpec& spec, std::size_t count, Rng& rng);
FederatedDataset generate_federation(const DataGenSpec& spec, Rng& rng);

// Fresh draw from client i's law; used both for dataset perturbation and for
// the evaluation points of the stability protocol.
Sample draw_replacement(const DataGenSpec& spec, int client, Rng& rng);

// Copy of fed with sample (client, position) swapped for the replacement.
FederatedDataset make_neighbor(const FederatedDataset& fed, const NeighborSpec& nspec);

// IDX binary pair (big-endian magic 2051 images / 2049 labels). Pixels are
// scaled to [0,1] and the feature vector shrunk into the unit ball.
ClientDataset load_idx(const std::string& images_path, const std::string& labels_path);

// Distribute a labeled pool (e.g. loaded IDX data) over clients using the same
// rho-mixture label law as the synthetic generator. Throws if a class runs out.
FederatedDataset federate_pool(const ClientDataset& pool, const DataGenSpec& spec, Rng& rng);

}  // namespace fedstab
