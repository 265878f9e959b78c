#ifndef BFAL_ORACLES_HPP
#define BFAL_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bfal/acquisition.hpp"
#include "bfal/errors.hpp"
#include "bfal/model.hpp"
#include "bfal/rng.hpp"
#include "bfal/serialize.hpp"

namespace bfal {

// ---------------------------------------------------------------------------
// Synthetic 2D probability fields on the unit square
// ---------------------------------------------------------------------------

enum class OracleKind { ToyLinear, ToyNonlinear, External };

struct ToyParams {
    double alpha = 20.0;  // base scale factor

    void validate() const {
        if (!(alpha > 0.0)) throw std::invalid_argument("ToyParams: alpha must be > 0");
    }
};

struct OracleSpec {
    OracleKind kind = OracleKind::ToyLinear;
    ToyParams params;
    std::string exchange_dir;  // External only

    bool is_toy() const { return kind != OracleKind::External; }
};

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

namespace detail {

inline void check_unit_square(const VectorXd& x, const char* where) {
    if (x.size() != 2 || x[0] < 0.0 || x[0] > 1.0 || x[1] < 0.0 || x[1] > 1.0) {
        throw std::invalid_argument(std::string(where) + ": point outside [0,1]^2");
    }
}

}  // namespace detail

// Shared low-fidelity decision boundary.
inline double toy_lf_boundary(double x1) {
    return (std::cos(kPi * x1 / 2.0) + 1.0) / 3.0 - 0.1;
}

inline double toy_boundary_sharpness(double x1, const ToyParams& p) {
    return p.alpha * (1.0 - 0.75 * x1);
}

inline double lf_probability(const VectorXd& x, const ToyParams& params = {}) {
    params.validate();
    detail::check_unit_square(x, "lf_probability");
    return sigmoid(toy_boundary_sharpness(x[0], params) * (x[1] - toy_lf_boundary(x[0])));
}

inline double toy_hf_boundary_linear(double x1) { return 0.8 * toy_lf_boundary(x1) + 0.3; }

inline double toy_hf_boundary_nonlinear(double x1) {
    return toy_lf_boundary(x1) + 0.2 * std::sin(3.0 * kPi * x1) * (1.0 - x1) + 0.1;
}

inline double hf_probability_linear(const VectorXd& x, const ToyParams& params = {}) {
    params.validate();
    detail::check_unit_square(x, "hf_probability_linear");
    return sigmoid(toy_boundary_sharpness(x[0], params) * (x[1] - toy_hf_boundary_linear(x[0])));
}

inline double hf_probability_nonlinear(const VectorXd& x, const ToyParams& params = {}) {
    params.validate();
    detail::check_unit_square(x, "hf_probability_nonlinear");
    return sigmoid(toy_boundary_sharpness(x[0], params) * (x[1] - toy_hf_boundary_nonlinear(x[0])));
}

inline double oracle_probability(const OracleSpec& oracle, const VectorXd& x, Fidelity fidelity) {
    if (!oracle.is_toy()) {
        throw std::invalid_argument("oracle_probability: external oracle has no accessible field");
    }
    if (fidelity == Fidelity::Low) return lf_probability(x, oracle.params);
    return oracle.kind == OracleKind::ToyLinear ? hf_probability_linear(x, oracle.params)
                                                : hf_probability_nonlinear(x, oracle.params);
}

// Independent Bernoulli draws, one per request; deterministic per rng state.
inline std::vector<int> sample_labels(const OracleSpec& oracle,
                                      const std::vector<std::pair<VectorXd, Fidelity>>& requests,
                                      Rng& rng) {
    if (!oracle.is_toy()) {
        throw ValidationError("sample_labels: external oracle requires the exchange protocol");
    }
    std::vector<int> labels(requests.size());
    for (std::size_t i = 0; i < requests.size(); ++i) {
        const double p = oracle_probability(oracle, requests[i].first, requests[i].second);
        labels[i] = rng.bernoulli(p) ? 1 : 0;
    }
    return labels;
}

// ---------------------------------------------------------------------------
// File exchange protocol for external simulators
//
// round_<id>.requests.json : [ {query_id, x, fidelity} ]   (one per repeat)
// round_<id>.results.json  : [ {query_id, y} ]
// ---------------------------------------------------------------------------

struct ExchangeRequest {
    std::string query_id;
    std::vector<double> x;
    Fidelity fidelity = Fidelity::Low;
};

inline std::string requests_path(const std::string& exchange_dir, int round_id) {
    return (std::filesystem::path(exchange_dir) / ("round_" + std::to_string(round_id) + ".requests.json"))
        .string();
}

inline std::string results_path(const std::string& exchange_dir, int round_id) {
    return (std::filesystem::path(exchange_dir) / ("round_" + std::to_string(round_id) + ".results.json"))
        .string();
}

inline std::string exchange_query_id(int round_id, int index) {
    return "r" + std::to_string(round_id) + "_q" + std::to_string(index);
}

// Writes the request file for a batch; one record per repeat, jitter already
// applied by greedy_batch. Coordinates are printed with 17 significant digits.
inline std::vector<ExchangeRequest> emit_requests(const QueryBatch& batch,
                                                  const std::string& exchange_dir, int round_id) {
    std::vector<ExchangeRequest> records;
    records.reserve(batch.expanded.size());
    for (std::size_t i = 0; i < batch.expanded.size(); ++i) {
        const ExpandedQuery& e = batch.expanded[i];
        ExchangeRequest r;
        r.query_id = exchange_query_id(round_id, static_cast<int>(i));
        r.x.assign(e.x.data(), e.x.data() + e.x.size());
        r.fidelity = e.fidelity;
        records.push_back(std::move(r));
    }

    std::string body = "[\n";
    char buf[64];
    for (std::size_t i = 0; i < records.size(); ++i) {
        const ExchangeRequest& r = records[i];
        body += "  {\"query_id\": \"" + r.query_id + "\", \"x\": [";
        for (std::size_t d = 0; d < r.x.size(); ++d) {
            std::snprintf(buf, sizeof buf, "%.16e", r.x[d]);
            body += buf;
            if (d + 1 < r.x.size()) body += ", ";
        }
        body += "], \"fidelity\": \"";
        body += fidelity_code(r.fidelity);
        body += "\"}";
        if (i + 1 < records.size()) body += ",";
        body += "\n";
    }
    body += "]\n";
    write_text_file(requests_path(exchange_dir, round_id), body);
    return records;
}

inline std::vector<ExchangeRequest> parse_requests(const std::string& exchange_dir, int round_id) {
    const std::string path = requests_path(exchange_dir, round_id);
    const json doc = parse_json(read_text_file(path), "request file " + path);
    if (!doc.is_array()) throw ParseError("request file " + path + ": expected a JSON array");
    std::vector<ExchangeRequest> out;
    for (const json& rec : doc) {
        ExchangeRequest r;
        try {
            r.query_id = rec.at("query_id").get<std::string>();
            r.x = rec.at("x").get<std::vector<double>>();
            const std::string fid = rec.at("fidelity").get<std::string>();
            if (fid == "L") {
                r.fidelity = Fidelity::Low;
            } else if (fid == "H") {
                r.fidelity = Fidelity::High;
            } else {
                throw ParseError("request file " + path + ": bad fidelity '" + fid + "'");
            }
        } catch (const json::exception& e) {
            throw ParseError("request file " + path + ": " + e.what());
        }
        out.push_back(std::move(r));
    }
    return out;
}

// Parses the results file and validates it against the emitted requests.
// Missing ids raise a ValidationError naming them unless accept_partial.
inline std::vector<std::pair<std::string, int>> ingest_results(const std::string& exchange_dir,
                                                               int round_id,
                                                               bool accept_partial = false) {
    const std::vector<ExchangeRequest> requests = parse_requests(exchange_dir, round_id);
    const std::string path = results_path(exchange_dir, round_id);
    const json doc = parse_json(read_text_file(path), "results file " + path);
    if (!doc.is_array()) throw ParseError("results file " + path + ": expected a JSON array");

    std::set<std::string> known;
    for (const ExchangeRequest& r : requests) known.insert(r.query_id);

    std::vector<std::pair<std::string, int>> out;
    std::set<std::string> seen;
    std::vector<std::string> unknown;
    for (const json& rec : doc) {
        std::string id;
        int y = -1;
        try {
            id = rec.at("query_id").get<std::string>();
            if (!rec.at("y").is_number_integer()) {
                throw ParseError("results file " + path + ": y must be an integer");
            }
            y = rec.at("y").get<int>();
        } catch (const json::exception& e) {
            throw ParseError("results file " + path + ": " + e.what());
        }
        if (y != 0 && y != 1) {
            throw ParseError("results file " + path + ": y out of {0,1} for " + id);
        }
        if (!known.count(id)) {
            unknown.push_back(id);
            continue;
        }
        if (!seen.insert(id).second) {
            throw ValidationError("results file " + path + ": duplicate query_id " + id);
        }
        out.emplace_back(id, y);
    }
    if (!unknown.empty()) {
        std::string msg = "results file " + path + ": unknown query ids:";
        for (const std::string& id : unknown) msg += " " + id;
        throw ValidationError(msg);
    }
    if (seen.size() != known.size() && !accept_partial) {
        std::string msg = "results file " + path + ": missing query ids:";
        for (const std::string& id : known) {
            if (!seen.count(id)) msg += " " + id;
        }
        throw ValidationError(msg);
    }
    return out;
}

}  // namespace bfal

#endif  // BFAL_ORACLES_HPP
