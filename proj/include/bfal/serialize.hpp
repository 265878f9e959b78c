#ifndef BFAL_SERIALIZE_HPP
#define BFAL_SERIALIZE_HPP

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bfal/errors.hpp"
#include "bfal/model.hpp"

namespace bfal {

using nlohmann::json;

constexpr int kFormatVersion = 1;

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    if (!in.good() && !in.eof()) throw IoError("read failure: " + path);
    return os.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << content;
    out.flush();
    if (!out.good()) throw IoError("write failure: " + path);
}

inline json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(what + ": " + e.what());
    }
}

inline void check_format_version(const json& doc, const std::string& what) {
    if (!doc.is_object() || !doc.contains("format_version") ||
        !doc["format_version"].is_number_integer()) {
        throw ParseError(what + ": missing format_version");
    }
    const int v = doc["format_version"].get<int>();
    if (v != kFormatVersion) {
        throw ParseError(what + ": unsupported format_version " + std::to_string(v));
    }
}

// ---------------------------------------------------------------------------
// Model document
// ---------------------------------------------------------------------------

namespace detail {

inline json latent_to_json(const LatentGp& gp) {
    json j;
    j["output_scale"] = gp.config.kernel.output_scale;
    j["lengthscale"] = gp.config.kernel.lengthscale;
    j["mean_const"] = gp.config.mean_const;
    json inducing = json::array();
    for (Eigen::Index i = 0; i < gp.config.inducing.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index d = 0; d < gp.config.inducing.cols(); ++d) {
            row.push_back(gp.config.inducing(i, d));
        }
        inducing.push_back(std::move(row));
    }
    j["inducing"] = std::move(inducing);
    j["var_mean"] = std::vector<double>(gp.var.mean.data(), gp.var.mean.data() + gp.var.mean.size());
    std::vector<double> tril;
    for (Eigen::Index i = 0; i < gp.var.chol.rows(); ++i) {
        for (Eigen::Index k = 0; k <= i; ++k) tril.push_back(gp.var.chol(i, k));
    }
    j["var_chol_tril"] = std::move(tril);
    return j;
}

inline LatentGp latent_from_json(const json& j, int input_dim, const std::string& what) {
    LatentGp gp;
    try {
        gp.config.kernel.output_scale = j.at("output_scale").get<double>();
        gp.config.kernel.lengthscale = j.at("lengthscale").get<double>();
        gp.config.mean_const = j.at("mean_const").get<double>();
        const json& ind = j.at("inducing");
        gp.config.inducing.resize(static_cast<Eigen::Index>(ind.size()), input_dim);
        for (std::size_t i = 0; i < ind.size(); ++i) {
            if (static_cast<int>(ind[i].size()) != input_dim) {
                throw ParseError(what + ": inducing point dimension mismatch");
            }
            for (int d = 0; d < input_dim; ++d) {
                gp.config.inducing(static_cast<Eigen::Index>(i), d) = ind[i][static_cast<std::size_t>(d)].get<double>();
            }
        }
        const auto mean = j.at("var_mean").get<std::vector<double>>();
        gp.var.mean = Eigen::Map<const VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
        const auto tril = j.at("var_chol_tril").get<std::vector<double>>();
        const Eigen::Index m = gp.var.mean.size();
        if (static_cast<Eigen::Index>(tril.size()) != m * (m + 1) / 2 ||
            gp.config.inducing.rows() != m) {
            throw ParseError(what + ": inconsistent latent sizes");
        }
        gp.var.chol = MatrixXd::Zero(m, m);
        std::size_t k = 0;
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index c = 0; c <= i; ++c) gp.var.chol(i, c) = tril[k++];
        }
    } catch (const json::exception& e) {
        throw ParseError(what + ": " + e.what());
    }
    gp.config.kernel.validate();
    if ((gp.var.chol.diagonal().array() <= 0.0).any()) {
        throw ParseError(what + ": variational Cholesky diagonal must be positive");
    }
    return gp;
}

}  // namespace detail

inline json model_to_json(const BfgpcModel& model) {
    json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = "bfgpc-model";
    j["input_dim"] = model.input_dim;
    j["domain_lo"] =
        std::vector<double>(model.domain_lo.data(), model.domain_lo.data() + model.domain_lo.size());
    j["domain_hi"] =
        std::vector<double>(model.domain_hi.data(), model.domain_hi.data() + model.domain_hi.size());
    j["rho"] = model.rho;
    j["lf"] = detail::latent_to_json(model.lf);
    j["delta"] = detail::latent_to_json(model.delta);
    return j;
}

inline BfgpcModel model_from_json(const json& j) {
    const std::string what = "model document";
    check_format_version(j, what);
    if (!j.contains("kind") || j["kind"] != "bfgpc-model") {
        throw ParseError(what + ": wrong document kind");
    }
    BfgpcModel model;
    try {
        model.input_dim = j.at("input_dim").get<int>();
        const auto lo = j.at("domain_lo").get<std::vector<double>>();
        const auto hi = j.at("domain_hi").get<std::vector<double>>();
        if (static_cast<int>(lo.size()) != model.input_dim ||
            static_cast<int>(hi.size()) != model.input_dim) {
            throw ParseError(what + ": domain bounds dimension mismatch");
        }
        model.domain_lo = Eigen::Map<const VectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size()));
        model.domain_hi = Eigen::Map<const VectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size()));
        model.rho = j.at("rho").get<double>();
        model.lf = detail::latent_from_json(j.at("lf"), model.input_dim, what + " (lf)");
        model.delta = detail::latent_from_json(j.at("delta"), model.input_dim, what + " (delta)");
    } catch (const json::exception& e) {
        throw ParseError(what + ": " + e.what());
    }
    return model;
}

inline void save_model(const BfgpcModel& model, const std::string& path) {
    write_text_file(path, model_to_json(model).dump(1) + "\n");
}

inline BfgpcModel load_model(const std::string& path) {
    return model_from_json(parse_json(read_text_file(path), "model document " + path));
}

// ---------------------------------------------------------------------------
// Dataset file: {format_version, lf: [{x, y, round_id?, query_id?}], hf: [...]}
// ---------------------------------------------------------------------------

struct DatasetRecord {
    std::vector<double> x;
    int y = 0;
    std::optional<int> round_id;
    std::optional<std::string> query_id;
};

struct DatasetFile {
    std::vector<DatasetRecord> lf;
    std::vector<DatasetRecord> hf;

    LabeledDataset to_labeled(int input_dim) const {
        LabeledDataset data;
        auto fill = [&](const std::vector<DatasetRecord>& recs, MatrixXd& xs, Eigen::VectorXi& ys) {
            xs.resize(static_cast<Eigen::Index>(recs.size()), input_dim);
            ys.resize(static_cast<Eigen::Index>(recs.size()));
            for (std::size_t i = 0; i < recs.size(); ++i) {
                if (static_cast<int>(recs[i].x.size()) != input_dim) {
                    throw ParseError("dataset: point dimension mismatch");
                }
                for (int d = 0; d < input_dim; ++d) {
                    xs(static_cast<Eigen::Index>(i), d) = recs[i].x[static_cast<std::size_t>(d)];
                }
                ys[static_cast<Eigen::Index>(i)] = recs[i].y;
            }
        };
        fill(lf, data.lf_x, data.lf_y);
        fill(hf, data.hf_x, data.hf_y);
        return data;
    }
};

namespace detail {

inline json record_to_json(const DatasetRecord& r) {
    json j;
    j["x"] = r.x;
    j["y"] = r.y;
    if (r.round_id) j["round_id"] = *r.round_id;
    if (r.query_id) j["query_id"] = *r.query_id;
    return j;
}

inline DatasetRecord record_from_json(const json& j, const std::string& what) {
    DatasetRecord r;
    try {
        r.x = j.at("x").get<std::vector<double>>();
        if (!j.at("y").is_number_integer()) {
            throw ParseError(what + ": label must be an integer");
        }
        r.y = j.at("y").get<int>();
        if (j.contains("round_id")) r.round_id = j["round_id"].get<int>();
        if (j.contains("query_id")) r.query_id = j["query_id"].get<std::string>();
    } catch (const json::exception& e) {
        throw ParseError(what + ": " + e.what());
    }
    if (r.y != 0 && r.y != 1) {
        throw ParseError(what + ": label out of {0,1}: " + std::to_string(r.y));
    }
    return r;
}

}  // namespace detail

inline json dataset_to_json(const DatasetFile& data) {
    json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = "bfal-dataset";
    json lf = json::array();
    for (const DatasetRecord& r : data.lf) lf.push_back(detail::record_to_json(r));
    json hf = json::array();
    for (const DatasetRecord& r : data.hf) hf.push_back(detail::record_to_json(r));
    j["lf"] = std::move(lf);
    j["hf"] = std::move(hf);
    return j;
}

inline DatasetFile dataset_from_json(const json& j) {
    const std::string what = "dataset";
    check_format_version(j, what);
    DatasetFile out;
    try {
        for (const json& r : j.at("lf")) out.lf.push_back(detail::record_from_json(r, what + " (lf)"));
        for (const json& r : j.at("hf")) out.hf.push_back(detail::record_from_json(r, what + " (hf)"));
    } catch (const json::exception& e) {
        throw ParseError(what + ": " + e.what());
    }
    return out;
}

inline void save_dataset(const DatasetFile& data, const std::string& path) {
    write_text_file(path, dataset_to_json(data).dump(1) + "\n");
}

inline DatasetFile load_dataset(const std::string& path) {
    return dataset_from_json(parse_json(read_text_file(path), "dataset " + path));
}

}  // namespace bfal

#endif  // BFAL_SERIALIZE_HPP
