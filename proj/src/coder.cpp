#include "tokmark/coder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "tokmark/codebook.hpp"
#include "tokmark/rng.hpp"

namespace tokmark {

LinearCoder LinearCoder::identity(int dim) {
    LinearCoder c;
    c.D = Eigen::MatrixXd::Identity(dim, dim);
    c.d_bias = Eigen::VectorXd::Zero(dim);
    c.E = Eigen::MatrixXd::Identity(dim, dim);
    c.e_bias = Eigen::VectorXd::Zero(dim);
    c.D0 = c.D;
    c.d0_bias = c.d_bias;
    return c;
}

bool LinearCoder::is_identity_decoder() const {
    return D.isIdentity(0.0) && d_bias.isZero(0.0);
}

void LinearCoder::decode_patch(const float* z, float* patch_out) const {
    const int d = dim();
    Eigen::VectorXd zv(d);
    for (int i = 0; i < d; ++i) zv[i] = double(z[i]);
    const Eigen::VectorXd out = D * zv + d_bias;
    for (int i = 0; i < d; ++i)
        patch_out[i] = float(std::clamp(out[i], 0.0, 1.0));
}

void LinearCoder::encode_patch(const float* patch, float* latent_out) const {
    const int d = dim();
    Eigen::VectorXd pv(d);
    for (int i = 0; i < d; ++i) pv[i] = double(patch[i]);
    const Eigen::VectorXd out = E * pv + e_bias;
    for (int i = 0; i < d; ++i) latent_out[i] = float(out[i]);
}

void FinetuneConfig::validate() const {
    if (lambda < 0.0) throw std::invalid_argument("FinetuneConfig: lambda must be >= 0");
    if (p_aug < 0.0 || p_aug > 1.0)
        throw std::invalid_argument("FinetuneConfig: p_aug must be in [0,1]");
    if (epochs < 0 || batch_size < 1)
        throw std::invalid_argument("FinetuneConfig: bad epochs or batch size");
    int covered = 0;
    for (const auto& s : stages) covered += s.epochs;
    if (epochs > 0 && covered < epochs)
        throw std::invalid_argument("FinetuneConfig: stages do not cover all epochs");
}

namespace {

std::vector<TransformSpec> parse_all(std::initializer_list<const char*> texts) {
    std::vector<TransformSpec> out;
    for (const char* t : texts) out.push_back(TransformSpec::parse(t));
    return out;
}

} // namespace

FinetuneConfig FinetuneConfig::defaults(int epochs) {
    FinetuneConfig cfg;
    cfg.epochs = epochs;
    // Progressively harder sets, scaled to what a linear coder can absorb
    // without losing its clean-image fixed point: noise ramps to the
    // evaluation strength, the rest stays mild.
    const auto a1 = parse_all({"noise:0.01", "noise:0.02", "noise:0.03",
                               "brighten:1.05", "rotate:-1", "rotate:1",
                               "jpeg_like:95", "blur:3", "crop:0.95"});
    const auto a2 = parse_all({"noise:0.03", "noise:0.05", "noise:0.07",
                               "brighten:1.1", "rotate:-1", "rotate:1",
                               "jpeg_like:90", "blur:3", "crop:0.95"});
    const auto a3 = parse_all({"noise:0.08", "noise:0.1", "noise:0.12",
                               "brighten:1.15", "rotate:-2", "rotate:2",
                               "jpeg_like:85", "blur:5", "crop:0.9"});
    const int warm = epochs > 0 ? 1 : 0;
    const int ramp1 = epochs > 1 ? 1 : 0;
    const int ramp2 = std::max(0, (epochs - warm - ramp1) / 2);
    const int ramp3 = std::max(0, epochs - warm - ramp1 - ramp2);
    cfg.stages = {{warm, {}}, {ramp1, a1}, {ramp2, a2}, {ramp3, a3}};
    return cfg;
}

namespace {

// Columns are the hard latents C[s_i] of the stream.
Eigen::MatrixXd hard_latents(const TokenStream& tokens, const Codebook& cb) {
    const int d = cb.dim();
    const int p = int(tokens.tokens.size());
    Eigen::MatrixXd z(d, p);
    for (int i = 0; i < p; ++i) {
        const int tok = tokens.tokens[size_t(i)];
        if (tok < 0 || tok >= cb.k)
            throw std::invalid_argument("coder loss: token out of codebook range");
        const float* e = cb.entry(tok);
        for (int t = 0; t < d; ++t) z(t, i) = double(e[t]);
    }
    return z;
}

ImageBuffer image_from_columns(const Eigen::MatrixXd& x, int rows, int cols, int f) {
    ImageBuffer img(rows * f, cols * f);
    for (int i = 0; i < rows * cols; ++i) {
        const int py = i / cols, px = i % cols;
        int at = 0;
        for (int y = 0; y < f; ++y)
            for (int x2 = 0; x2 < f; ++x2)
                for (int c = 0; c < 3; ++c)
                    img.at(py * f + y, px * f + x2, c) = float(x(at++, i));
    }
    return img;
}

Eigen::MatrixXd columns_from_image(const ImageBuffer& img, int f) {
    int rows = 0, cols = 0;
    const auto patches = image_patches(img, f, &rows, &cols);
    const int d = 3 * f * f;
    Eigen::MatrixXd y(d, rows * cols);
    for (int i = 0; i < rows * cols; ++i)
        for (int t = 0; t < d; ++t)
            y(t, i) = double(patches[size_t(i) * size_t(d) + size_t(t)]);
    return y;
}

void grid_shape(const TokenStream& tokens, int* rows, int* cols) {
    const int side = int(std::lround(std::sqrt(double(tokens.tokens.size()))));
    if (int64_t(side) * side != int64_t(tokens.tokens.size()))
        throw std::invalid_argument("coder loss: stream is not a square grid");
    *rows = side;
    *cols = side;
}

} // namespace

double rcc_loss(const TokenStream& tokens, const LinearCoder& coder,
                const Codebook& cb, const TransformSpec& aug, CoderGradients* grads) {
    int rows = 0, cols = 0;
    grid_shape(tokens, &rows, &cols);
    const int p = rows * cols;
    const Eigen::MatrixXd z = hard_latents(tokens, cb);
    const Eigen::MatrixXd x = (coder.D * z).colwise() + coder.d_bias;

    Eigen::MatrixXd y;
    if (aug.kind == TransformKind::identity) {
        y = x;
    } else {
        const ImageBuffer raw = image_from_columns(x, rows, cols, cb.patch_size);
        y = columns_from_image(apply_transform(raw, aug), cb.patch_size);
    }

    const Eigen::MatrixXd u = (coder.E * y).colwise() + coder.e_bias;
    const Eigen::MatrixXd r = z - u;
    const double loss = r.squaredNorm() / double(p);

    if (grads) {
        const double scale = -2.0 / double(p);
        grads->dE = scale * r * y.transpose();
        grads->de_bias = scale * r.rowwise().sum();
        // Straight-through: the augmentation residual (y - x) is frozen, so
        // dy/dD reduces to dx/dD.
        const Eigen::MatrixXd dx = scale * (coder.E.transpose() * r);
        grads->dD = dx * z.transpose();
        grads->dd_bias = dx.rowwise().sum();
    }
    return loss;
}

double reg_loss(const TokenStream& tokens, const LinearCoder& coder,
                const Codebook& cb, CoderGradients* grads) {
    const Eigen::MatrixXd z = hard_latents(tokens, cb);
    const int p = int(z.cols());
    const Eigen::MatrixXd r =
        ((coder.D - coder.D0) * z).colwise() + (coder.d_bias - coder.d0_bias);
    const double loss = r.squaredNorm() / double(p);
    if (grads) {
        const double scale = 2.0 / double(p);
        grads->dD = scale * r * z.transpose();
        grads->dd_bias = scale * r.rowwise().sum();
        grads->dE = Eigen::MatrixXd::Zero(coder.E.rows(), coder.E.cols());
        grads->de_bias = Eigen::VectorXd::Zero(coder.e_bias.size());
    }
    return loss;
}

std::vector<EpochTrace> finetune(const std::vector<TokenStream>& dataset,
                                 LinearCoder& coder, const Codebook& cb,
                                 const FinetuneConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("finetune: empty dataset");

    std::vector<EpochTrace> trace;
    Rng rng(mix64(seed, 0x66696e65ULL));
    std::vector<size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), size_t(0));

    int stage_idx = 0, stage_left = cfg.stages.empty() ? 0 : cfg.stages[0].epochs;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        while (stage_left == 0 && stage_idx + 1 < int(cfg.stages.size())) {
            ++stage_idx;
            stage_left = cfg.stages[size_t(stage_idx)].epochs;
        }
        --stage_left;
        const auto& stage_augs = cfg.stages[size_t(stage_idx)].augs;
        const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, epoch);

        // Seeded shuffle of the stream order.
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[size_t(rng.below(i))]);

        double epoch_rcc = 0.0, epoch_reg = 0.0;
        int steps = 0;
        for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + size_t(cfg.batch_size));

            TransformSpec aug; // identity
            if (!stage_augs.empty() && rng.uniform() < cfg.p_aug) {
                aug = stage_augs[size_t(rng.below(stage_augs.size()))];
                if (aug.kind == TransformKind::noise) aug.seed = rng.next_u64();
            }

            CoderGradients total;
            total.dD = Eigen::MatrixXd::Zero(coder.D.rows(), coder.D.cols());
            total.dd_bias = Eigen::VectorXd::Zero(coder.d_bias.size());
            total.dE = Eigen::MatrixXd::Zero(coder.E.rows(), coder.E.cols());
            total.de_bias = Eigen::VectorXd::Zero(coder.e_bias.size());
            double batch_rcc = 0.0, batch_reg = 0.0;
            for (size_t i = start; i < end; ++i) {
                CoderGradients g;
                batch_rcc += rcc_loss(dataset[order[i]], coder, cb, aug, &g);
                total.dD += g.dD;
                total.dd_bias += g.dd_bias;
                total.dE += g.dE;
                total.de_bias += g.de_bias;
                if (cfg.lambda > 0.0) {
                    batch_reg += reg_loss(dataset[order[i]], coder, cb, &g);
                    total.dD += cfg.lambda * g.dD;
                    total.dd_bias += cfg.lambda * g.dd_bias;
                }
            }
            const double inv = 1.0 / double(end - start);
            if (!std::isfinite(batch_rcc) || !std::isfinite(batch_reg))
                throw std::runtime_error("finetune: NaN loss at epoch " +
                                         std::to_string(epoch) + ", step " +
                                         std::to_string(steps));
            coder.D -= lr * inv * total.dD;
            coder.d_bias -= lr * inv * total.dd_bias;
            coder.E -= lr * inv * total.dE;
            coder.e_bias -= lr * inv * total.de_bias;
            epoch_rcc += batch_rcc * inv;
            epoch_reg += batch_reg * inv;
            ++steps;
        }
        trace.push_back({epoch, epoch_rcc / steps, epoch_reg / steps});
    }
    return trace;
}

namespace {
constexpr char kCoderMagic[9] = "TKCODER1";
constexpr uint32_t kCoderVersion = 1;

template <typename Mat>
void write_mat(std::ofstream& out, const Mat& m) {
    out.write(reinterpret_cast<const char*>(m.data()),
              std::streamsize(size_t(m.size()) * sizeof(double)));
}

template <typename Mat>
void read_mat(std::ifstream& in, Mat& m) {
    in.read(reinterpret_cast<char*>(m.data()),
            std::streamsize(size_t(m.size()) * sizeof(double)));
    if (size_t(in.gcount()) != size_t(m.size()) * sizeof(double))
        throw std::runtime_error("coder file: truncated");
}
} // namespace

void save_coder(const LinearCoder& coder, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(kCoderMagic, 8);
    const uint32_t d = uint32_t(coder.dim());
    out.write(reinterpret_cast<const char*>(&d), 4);
    out.write(reinterpret_cast<const char*>(&kCoderVersion), 4);
    write_mat(out, coder.D);
    write_mat(out, coder.d_bias);
    write_mat(out, coder.E);
    write_mat(out, coder.e_bias);
    write_mat(out, coder.D0);
    write_mat(out, coder.d0_bias);
}

LinearCoder load_coder(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kCoderMagic, 8) != 0)
        throw std::runtime_error("not a coder file: " + path);
    uint32_t d = 0, version = 0;
    in.read(reinterpret_cast<char*>(&d), 4);
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != kCoderVersion)
        throw std::runtime_error("coder file: unsupported version");
    LinearCoder c = LinearCoder::identity(int(d));
    read_mat(in, c.D);
    read_mat(in, c.d_bias);
    read_mat(in, c.E);
    read_mat(in, c.e_bias);
    read_mat(in, c.D0);
    read_mat(in, c.d0_bias);
    return c;
}

void write_trace_csv(const std::vector<EpochTrace>& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "epoch,L_RCC,L_reg\n";
    char line[96];
    for (const auto& t : trace) {
        std::snprintf(line, sizeof(line), "%d,%.9g,%.9g\n", t.epoch, t.rcc, t.reg);
        out << line;
    }
}

} // namespace tokmark
