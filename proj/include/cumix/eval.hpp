#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cumix/data.hpp"
#include "cumix/nn.hpp"
#include "cumix/transforms.hpp"

namespace cumix::eval {

// x_adv = clip(x + eps * sign(dL/dx), 0, 1), single step, eval-mode network.
Tensor<float> fgsm(nn::Network<float>& net, const Tensor<float>& x, const Tensor<float>& y_onehot,
                   double epsilon);

// Top-1 accuracy in [0,1]. Transformed variants draw per-image parameters
// from the eval seed: rotate/shear magnitudes are uniform in [-m, m], zoom is
// the fixed scale, corruptions use their per-severity parameters.
double accuracy(nn::Network<float>& net, const data::Dataset& ds, int64_t batch = 128);
double accuracy_fgsm(nn::Network<float>& net, const data::Dataset& ds, double epsilon,
                     int64_t batch = 128);
double accuracy_deformed(nn::Network<float>& net, const data::Dataset& ds,
                         const data::DeformSpec& spec, uint64_t eval_seed, int64_t batch = 128);
double accuracy_corrupted(nn::Network<float>& net, const data::Dataset& ds,
                          const data::CorruptionSpec& spec, uint64_t eval_seed,
                          int64_t batch = 128);

// The eight-magnitude deformation grid used by the robustness report.
std::vector<data::DeformSpec> deformation_grid();
std::vector<data::CorruptionSpec::Kind> corruption_kinds();

// Arithmetic mean over all (kind, severity) cells; errors in percent.
double mean_corruption_error(const std::vector<std::vector<double>>& error_matrix);

struct RobustnessReport {
    double clean_acc = 0.0;  // percentages
    double fgsm_epsilon = 0.0;
    double fgsm_acc = -1.0;  // negative = suite not run
    std::vector<std::pair<std::string, double>> deform_accs;
    std::vector<std::string> corruption_names;
    std::vector<std::vector<double>> corruption_err;  // [kind][severity-1]
    double mce = -1.0;

    void write_csv(std::ostream& os) const;
};

enum class Direction { DropFromTop, DropFromBottom };

struct RelianceCurve {
    Direction direction = Direction::DropFromTop;
    std::vector<std::pair<double, double>> points;  // (fraction dropped, accuracy in [0,1])
};

std::vector<double> default_fractions();  // 0, 0.05, ..., 0.95

// Per sample, zeroes the given fraction of highest- (or lowest-) valued
// latent dimensions and reclassifies through the head only.
RelianceCurve feature_reliance(nn::Network<float>& net, const data::Dataset& ds, Direction dir,
                               const std::vector<double>& fractions = default_fractions(),
                               int64_t batch = 256);
// Both directions from one latent extraction (shared fraction-0 anchor).
std::pair<RelianceCurve, RelianceCurve> feature_reliance_both(
    nn::Network<float>& net, const data::Dataset& ds,
    const std::vector<double>& fractions = default_fractions(), int64_t batch = 256);

// Trapezoidal area under the curve over the fraction axis.
double reliance_area(const RelianceCurve& curve);

struct NormHistogram2D {
    int64_t k = 0;
    std::vector<double> act_edges;   // log10-spaced bin edges
    std::vector<double> grad_edges;
    std::vector<std::vector<int64_t>> counts;  // [act_bin][grad_bin]
    int64_t total = 0;
    // raw per-(filter,batch) samples, used by tests and the SVG rendering
    std::vector<std::pair<double, double>> samples;
};

// Per filter of block k's conv and per batch: (batch-averaged activation-map
// l2 norm, weight-gradient l2 norm), binned on log scales. k in 1..blocks.
NormHistogram2D activation_gradient_histogram(nn::Network<float>& net, const data::Dataset& ds,
                                              int64_t k, int64_t bins, int64_t batch = 64,
                                              int64_t max_batches = 8);

struct LandscapeGrid {
    uint64_t seed = 0;
    int64_t grid_n = 21;
    double span = 1.0;
    std::vector<double> coords;              // shared a/b coordinates
    std::vector<std::vector<double>> loss;   // [ai][bi]
};

// Mean loss on a fixed batch set at theta + a*d1 + b*d2 with filter-normalized
// Gaussian directions; grid_n must be odd so (0,0) is on the grid.
LandscapeGrid loss_landscape(nn::Network<float>& net, const data::Dataset& ds, int64_t grid_n,
                             uint64_t seed, double span = 1.0, int64_t batches = 2,
                             int64_t batch = 64);

struct OODReport {
    double fpr95 = 0.0;
    double auroc = 0.0;
    double aupr = 0.0;
};

// Convention: higher score = more in-distribution. AUROC uses tie-corrected
// rank statistics; AUPR treats in-distribution as positive; FPR95 linearly
// interpolates between achievable TPR points.
OODReport ood_metrics(const std::vector<double>& scores_in, const std::vector<double>& scores_out);

// Maximum softmax probability per sample.
std::vector<double> msp_scores(nn::Network<float>& net, const data::Dataset& ds,
                               int64_t batch = 128);

}  // namespace cumix::eval
