#include <cmath>
#include <ostream>
#include <stdexcept>

#include "saelab/io.hpp"
#include "saelab/rng.hpp"
#include "saelab/sae.hpp"

namespace saelab::sae {

std::string to_string(Nonlinearity n) {
    return n == Nonlinearity::ReLU ? "relu" : "jumprelu";
}

Nonlinearity nonlinearity_from_string(const std::string& s) {
    if (s == "relu") {
        return Nonlinearity::ReLU;
    }
    if (s == "jumprelu") {
        return Nonlinearity::JumpReLU;
    }
    throw std::invalid_argument("unknown nonlinearity '" + s + "' (expected relu or jumprelu)");
}

nlohmann::json sparsity_to_json(const Sparsity& s) {
    if (const auto* l1 = std::get_if<L1Penalty>(&s)) {
        return {{"kind", "l1"}, {"lambda", l1->lambda}};
    }
    const auto& t = std::get<TanhPenalty>(s);
    return {{"kind", "tanh"}, {"c", t.c}, {"lambda_s", t.lambda_s}};
}

Sparsity sparsity_from_json(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "l1") {
        return L1Penalty{j.value("lambda", 0.1)};
    }
    if (kind == "tanh") {
        return TanhPenalty{j.value("c", 0.1), j.value("lambda_s", 1.0)};
    }
    throw std::invalid_argument("unknown sparsity kind '" + kind + "' (expected l1 or tanh)");
}

// ----------------------------------------------------------------- SaeModel

SaeModel::SaeModel(std::size_t latents, std::size_t dim, Nonlinearity nonlinearity)
    : layout_{latents, dim, nonlinearity == Nonlinearity::JumpReLU},
      nonlinearity_{nonlinearity},
      params_(layout_.size(), 0.0) {
    if (dim == 0) {
        throw std::invalid_argument("SAE input dimension must be positive");
    }
}

SaeModel SaeModel::initialized(std::size_t latents, std::size_t dim, Nonlinearity nonlinearity,
                               std::uint64_t seed, double scale, double threshold_init) {
    SaeModel m(latents, dim, nonlinearity);
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t j = 0; j < latents; ++j) {
        auto row = m.encoder_row(j);
        double norm2 = 0.0;
        do {
            norm2 = 0.0;
            for (auto& v : row) {
                v = normal(rng);
                norm2 += v * v;
            }
        } while (norm2 == 0.0);
        const double s = scale / std::sqrt(norm2);
        auto col = m.decoder_column(j);
        for (std::size_t k = 0; k < dim; ++k) {
            row[k] *= s;
            col[k] = row[k];
        }
    }
    if (nonlinearity == Nonlinearity::JumpReLU) {
        for (auto& t : m.thresholds()) {
            t = threshold_init;
        }
    }
    return m;
}

std::span<const double> SaeModel::encoder_row(std::size_t j) const {
    return std::span<const double>(params_).subspan(layout_.encoder() + j * dim(), dim());
}
std::span<double> SaeModel::encoder_row(std::size_t j) {
    return std::span<double>(params_).subspan(layout_.encoder() + j * dim(), dim());
}
std::span<const double> SaeModel::decoder_column(std::size_t j) const {
    return std::span<const double>(params_).subspan(layout_.decoder() + j * dim(), dim());
}
std::span<double> SaeModel::decoder_column(std::size_t j) {
    return std::span<double>(params_).subspan(layout_.decoder() + j * dim(), dim());
}
std::span<const double> SaeModel::encoder_bias() const {
    return std::span<const double>(params_).subspan(layout_.encoder_bias(), latents());
}
std::span<double> SaeModel::encoder_bias() {
    return std::span<double>(params_).subspan(layout_.encoder_bias(), latents());
}
std::span<const double> SaeModel::decoder_bias() const {
    return std::span<const double>(params_).subspan(layout_.decoder_bias(), dim());
}
std::span<double> SaeModel::decoder_bias() {
    return std::span<double>(params_).subspan(layout_.decoder_bias(), dim());
}
std::span<const double> SaeModel::thresholds() const {
    return std::span<const double>(params_).subspan(layout_.threshold(),
                                                    layout_.thresholds ? latents() : 0);
}
std::span<double> SaeModel::thresholds() {
    return std::span<double>(params_).subspan(layout_.threshold(),
                                              layout_.thresholds ? latents() : 0);
}

std::vector<double> SaeModel::encode(std::span<const double> x) const {
    if (x.size() != dim()) {
        throw std::invalid_argument("encode: input has wrong dimension");
    }
    std::vector<double> f(latents());
    const auto be = encoder_bias();
    const auto theta = thresholds();
    for (std::size_t j = 0; j < latents(); ++j) {
        const auto w = encoder_row(j);
        double z = be[j];
        for (std::size_t k = 0; k < dim(); ++k) {
            z += w[k] * x[k];
        }
        if (nonlinearity_ == Nonlinearity::ReLU) {
            f[j] = z > 0.0 ? z : 0.0;
        } else {
            f[j] = z > theta[j] ? z : 0.0;
        }
    }
    return f;
}

std::vector<double> SaeModel::decode(std::span<const double> f) const {
    if (f.size() != latents()) {
        throw std::invalid_argument("decode: activation vector has wrong length");
    }
    const auto bd = decoder_bias();
    std::vector<double> x(bd.begin(), bd.end());
    for (std::size_t j = 0; j < latents(); ++j) {
        if (f[j] == 0.0) {
            continue;
        }
        const auto w = decoder_column(j);
        for (std::size_t k = 0; k < dim(); ++k) {
            x[k] += f[j] * w[k];
        }
    }
    return x;
}

void SaeModel::validate() const {
    if (params_.size() != layout_.size()) {
        throw std::invalid_argument("SAE parameter vector does not match its layout");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!std::isfinite(params_[i])) {
            throw std::invalid_argument("SAE parameter " + std::to_string(i) + " is not finite");
        }
    }
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
        throw std::invalid_argument("SAE bandwidth must be positive and finite");
    }
}

io::Matrix decoder_matrix(const SaeModel& model) {
    io::Matrix m;
    m.rows = model.dim();
    m.cols = model.latents();
    m.data.assign(m.rows * m.cols, 0.0);
    for (std::size_t j = 0; j < model.latents(); ++j) {
        const auto w = model.decoder_column(j);
        for (std::size_t k = 0; k < model.dim(); ++k) {
            m(k, j) = w[k];
        }
    }
    return m;
}

BatchLoss loss(const SaeModel& model, std::span<const double> batch, std::size_t rows,
               const Sparsity& sparsity) {
    return kernels::evaluate_parallel(model, batch, rows, sparsity);
}

std::vector<double> gradients(const SaeModel& model, std::span<const double> batch,
                              std::size_t rows, const Sparsity& sparsity, BatchLoss* loss_out) {
    std::vector<double> grad(model.layout().size());
    const BatchLoss l = kernels::evaluate_parallel(model, batch, rows, sparsity, grad);
    if (loss_out != nullptr) {
        *loss_out = l;
    }
    return grad;
}

// --------------------------------------------------------------------- Adam

Adam::Adam(std::size_t size, double learning_rate, AdamParams params)
    : lr_{learning_rate}, p_{params}, m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) {
        throw std::invalid_argument("Adam: parameter/gradient size mismatch");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(p_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(p_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = p_.beta1 * m_[i] + (1.0 - p_.beta1) * grad[i];
        v_[i] = p_.beta2 * v_[i] + (1.0 - p_.beta2) * grad[i] * grad[i];
        const double mhat = m_[i] / c1;
        const double vhat = v_[i] / c2;
        params[i] -= lr_ * mhat / (std::sqrt(vhat) + p_.epsilon);
    }
}

// -------------------------------------------------------------- TrainConfig

void TrainConfig::validate() const {
    if (steps < 0) {
        throw std::invalid_argument("train config: steps must be >= 0");
    }
    if (batch_size == 0 || !(learning_rate > 0.0) || eval_samples == 0 || log_every <= 0) {
        throw std::invalid_argument(
            "train config: batch size, learning rate, eval samples and log interval must be "
            "positive");
    }
    if (const auto* l1 = std::get_if<L1Penalty>(&sparsity)) {
        if (!(l1->lambda >= 0.0)) {
            throw std::invalid_argument("train config: lambda must be >= 0");
        }
    } else {
        const auto& t = std::get<TanhPenalty>(sparsity);
        if (!(t.lambda_s >= 0.0) || !(t.c > 0.0)) {
            throw std::invalid_argument("train config: tanh penalty needs c > 0, lambda_s >= 0");
        }
    }
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json j = {{"steps", steps},
                        {"batch_size", batch_size},
                        {"learning_rate", learning_rate},
                        {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2},
                                  {"epsilon", adam.epsilon}}},
                        {"sparsity", sparsity_to_json(sparsity)},
                        {"nonlinearity", to_string(nonlinearity)},
                        {"seed", seed},
                        {"eval_samples", eval_samples},
                        {"log_every", log_every},
                        {"init_scale", init_scale},
                        {"threshold_init", threshold_init},
                        {"bandwidth_factor", bandwidth_factor}};
    j["eval_seed"] = eval_seed ? nlohmann::json(*eval_seed) : nlohmann::json(nullptr);
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        c.adam.beta1 = a.value("beta1", c.adam.beta1);
        c.adam.beta2 = a.value("beta2", c.adam.beta2);
        c.adam.epsilon = a.value("epsilon", c.adam.epsilon);
    }
    if (j.contains("sparsity")) {
        c.sparsity = sparsity_from_json(j.at("sparsity"));
    }
    if (j.contains("nonlinearity")) {
        c.nonlinearity = nonlinearity_from_string(j.at("nonlinearity").get<std::string>());
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("eval_seed") && !j.at("eval_seed").is_null()) {
        c.eval_seed = j.at("eval_seed").get<std::uint64_t>();
    }
    c.eval_samples = j.value("eval_samples", c.eval_samples);
    c.log_every = j.value("log_every", c.log_every);
    c.init_scale = j.value("init_scale", c.init_scale);
    c.threshold_init = j.value("threshold_init", c.threshold_init);
    c.bandwidth_factor = j.value("bandwidth_factor", c.bandwidth_factor);
    c.validate();
    return c;
}

// ------------------------------------------------------------- persistence

void write_history_csv(std::ostream& out, std::span<const HistoryRow> history) {
    out << "step,total,recon,sparsity\n";
    for (const auto& h : history) {
        out << h.step << ',' << io::format_double(h.total) << ',' << io::format_double(h.recon)
            << ',' << io::format_double(h.sparsity) << '\n';
    }
}

void save_checkpoint(const std::filesystem::path& path, const SaeModel& model,
                     const nlohmann::json& config) {
    const auto& l = model.layout();
    nlohmann::json meta = {
        {"format", "saelab-checkpoint-1"},
        {"latents", model.latents()},
        {"input_dim", model.dim()},
        {"nonlinearity", to_string(model.nonlinearity())},
        {"bandwidth", model.bandwidth},
        {"layout",
         {{"encoder", {l.encoder(), "latents x input_dim, row-major"}},
          {"encoder_bias", {l.encoder_bias(), "latents"}},
          {"decoder", {l.decoder(), "latents x input_dim, row j = decoder column j"}},
          {"decoder_bias", {l.decoder_bias(), "input_dim"}},
          {"threshold", {l.threshold(), l.thresholds ? "latents" : "absent"}}}},
        {"config", config},
        {"config_hash", io::config_hash(config)}};
    io::write_binary(path, model.parameters(), meta);
}

SaeModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* sidecar) {
    nlohmann::json meta;
    auto values = io::read_binary(path, &meta);
    SaeModel model(meta.at("latents").get<std::size_t>(), meta.at("input_dim").get<std::size_t>(),
                   nonlinearity_from_string(meta.at("nonlinearity").get<std::string>()));
    if (values.size() != model.layout().size()) {
        throw std::runtime_error(path.string() + ": parameter count does not match dims");
    }
    std::copy(values.begin(), values.end(), model.parameters().begin());
    model.bandwidth = meta.value("bandwidth", 0.001);
    model.validate();
    if (sidecar != nullptr) {
        *sidecar = std::move(meta);
    }
    return model;
}

}  // namespace saelab::sae
