#pragma once

// JSON round-trips for every certificate-bearing type.  One document per
// artifact with a "schema_version" field; rationals as exact "p" or "p/q"
// strings; object keys are kept sorted so identical data dumps to identical
// bytes.  Non-exact doubles (sampled lower bounds, heuristic scores) keep
// their shortest round-trip form.

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "pipeline.hpp"

namespace haarfact {

inline constexpr int kSchemaVersion = 1;

using Json = nlohmann::json;

inline std::string rational_to_string(const Rational& q) { return format_rational(q); }

inline Rational rational_from_string(const std::string& s) {
    auto slash = s.find('/');
    try {
        if (slash == std::string::npos) return Rational(BigInt(s));
        BigInt num(s.substr(0, slash));
        BigInt den(s.substr(slash + 1));
        if (den == 0) throw std::invalid_argument("zero denominator");
        return Rational(num, den);
    } catch (const std::exception&) {
        throw std::invalid_argument("not a rational: '" + s + "'");
    }
}

}  // namespace haarfact

// Rational is a boost type, so argument-dependent lookup cannot reach free
// to_json/from_json overloads in namespace haarfact; specialize the
// serializer instead.
namespace nlohmann {
template <>
struct adl_serializer<haarfact::Rational> {
    static void to_json(json& j, const haarfact::Rational& q) {
        j = haarfact::rational_to_string(q);
    }
    static void from_json(const json& j, haarfact::Rational& q) {
        q = haarfact::rational_from_string(j.get<std::string>());
    }
};
}  // namespace nlohmann

namespace haarfact {

// ----- scalars -------------------------------------------------------------

inline void to_json(Json& j, const DyadicInterval& I) { j = I.code; }
inline void from_json(const Json& j, DyadicInterval& I) { I.code = j.get<uint32_t>(); }

inline void to_json(Json& j, const Bound& b) {
    j = Json{{"exact", b.exact}, {"q", b.q}, {"d", b.d}};
}
inline void from_json(const Json& j, Bound& b) {
    j.at("exact").get_to(b.exact);
    j.at("q").get_to(b.q);
    j.at("d").get_to(b.d);
}

inline void to_json(Json& j, const Space& x) {
    if (x.is_linf()) j = Json{{"type", "Linf"}};
    else j = Json{{"type", "Lp"}, {"p", x.p()}};
}
inline void from_json(const Json& j, Space& x) {
    std::string type = j.at("type").get<std::string>();
    if (type == "Linf") x = Space::linf();
    else if (type == "Lp") x = Space::lp(j.at("p").get<Rational>());
    else throw std::invalid_argument("unknown space type: '" + type + "'");
}

// ----- dyadic / step functions ----------------------------------------------

inline void to_json(Json& j, const BranchSet& s) {
    j = Json{{"depth", s.depth}, {"masks", s.masks}};
}
inline void from_json(const Json& j, BranchSet& s) {
    j.at("depth").get_to(s.depth);
    j.at("masks").get_to(s.masks);
    s.normalize();
}

inline void to_json(Json& j, const StepFunction& f) {
    j = Json{{"depth", f.depth}, {"values", f.v}};
}
inline void from_json(const Json& j, StepFunction& f) {
    j.at("depth").get_to(f.depth);
    j.at("values").get_to(f.v);
    if (f.v.size() != (size_t(1) << f.depth))
        throw std::invalid_argument("step function value count does not match its depth");
}

inline void to_json(Json& j, const HaarCoeffs& c) {
    j = Json{{"depth", c.depth}, {"entries", c.c}};
}
inline void from_json(const Json& j, HaarCoeffs& c) {
    j.at("depth").get_to(c.depth);
    j.at("entries").get_to(c.c);
    if (c.c.size() != (size_t(1) << c.depth))
        throw std::invalid_argument("coefficient count does not match the depth");
}

// entries array position i holds the value at interval code i + 1
inline void to_json(Json& j, const HaarMultiplier& d) {
    j = Json{{"depth", d.depth}, {"entries", d.a}};
}
inline void from_json(const Json& j, HaarMultiplier& d) {
    j.at("depth").get_to(d.depth);
    j.at("entries").get_to(d.a);
    if (d.a.size() != node_count(d.depth))
        throw std::invalid_argument("multiplier entry count does not match the depth");
}

// ----- operators -------------------------------------------------------------

inline void to_json(Json& j, const L1Operator& t) {
    std::vector<std::vector<Rational>> rows;
    for (uint32_t i = 1; i <= t.dim(); ++i) {
        std::vector<Rational> row;
        for (uint32_t k = 1; k <= t.dim(); ++k) row.push_back(t.at(i, k));
        rows.push_back(std::move(row));
    }
    j = Json{{"depth", t.depth}, {"matrix", rows}};
}
inline void from_json(const Json& j, L1Operator& t) {
    int depth = j.at("depth").get<int>();
    t = L1Operator::zero(depth);
    const Json& rows = j.at("matrix");
    if (rows.size() != t.dim()) throw std::invalid_argument("operator row count mismatch");
    for (uint32_t i = 1; i <= t.dim(); ++i) {
        const Json& row = rows[i - 1];
        if (row.size() != t.dim()) throw std::invalid_argument("operator column count mismatch");
        for (uint32_t k = 1; k <= t.dim(); ++k) t.at(i, k) = row[k - 1].get<Rational>();
    }
}

inline void to_json(Json& j, const FaithfulHaarSystem::Node& n) {
    j = Json{{"host_level", n.host_level}, {"blocks", n.blocks}, {"signs", n.signs}};
}
inline void from_json(const Json& j, FaithfulHaarSystem::Node& n) {
    j.at("host_level").get_to(n.host_level);
    j.at("blocks").get_to(n.blocks);
    j.at("signs").get_to(n.signs);
}

inline void to_json(Json& j, const FaithfulHaarSystem& sys) {
    j = Json{{"host_depth", sys.host_depth},
             {"depth", sys.depth},
             {"root", sys.root},
             {"nodes", sys.nodes}};
}
inline void from_json(const Json& j, FaithfulHaarSystem& sys) {
    j.at("host_depth").get_to(sys.host_depth);
    j.at("depth").get_to(sys.depth);
    j.at("root").get_to(sys.root);
    j.at("nodes").get_to(sys.nodes);
}

inline void to_json(Json& j, const ScalarReduction& s) {
    j = Json{{"root_code", s.root_code},
             {"value", s.value},
             {"achieved", s.achieved},
             {"found", s.found},
             {"level_cap", s.level_cap}};
}
inline void from_json(const Json& j, ScalarReduction& s) {
    j.at("root_code").get_to(s.root_code);
    j.at("value").get_to(s.value);
    j.at("achieved").get_to(s.achieved);
    j.at("found").get_to(s.found);
    j.at("level_cap").get_to(s.level_cap);
}

// ----- mixed layer ------------------------------------------------------------

inline void to_json(Json& j, const MixedFunction& f) {
    j = Json{{"n", f.n}, {"m", f.m}, {"grid", f.v}};
}
inline void from_json(const Json& j, MixedFunction& f) {
    j.at("n").get_to(f.n);
    j.at("m").get_to(f.m);
    j.at("grid").get_to(f.v);
    if (f.v.size() != (size_t(1) << (f.n + f.m)))
        throw std::invalid_argument("mixed grid size does not match the depths");
}

inline void to_json(Json& j, const MixedOperator& t) {
    Json blocks = Json::object();
    for (const auto& [key, w] : t.blocks)
        blocks[std::to_string(key.first) + "," + std::to_string(key.second)] = w;
    j = Json{{"n", t.n},
             {"m", t.m},
             {"block_convention", "unit-haar-pairing"},
             {"blocks", std::move(blocks)}};
}
inline void from_json(const Json& j, MixedOperator& t) {
    t = MixedOperator::zero(j.at("n").get<int>(), j.at("m").get<int>());
    if (j.contains("block_convention") &&
        j.at("block_convention").get<std::string>() != "unit-haar-pairing")
        throw std::invalid_argument("unsupported block convention");
    for (const auto& [key, w] : j.at("blocks").items()) {
        auto comma = key.find(',');
        if (comma == std::string::npos)
            throw std::invalid_argument("block key must be 'L,M': '" + key + "'");
        uint32_t L = uint32_t(std::stoul(key.substr(0, comma)));
        uint32_t M = uint32_t(std::stoul(key.substr(comma + 1)));
        t.block_ref(L, M) = w.get<L1Operator>();
    }
    t.prune();
}

inline void to_json(Json& j, const GridRestriction& r) {
    j = Json{{"host_depth", r.host_depth}, {"level", r.level}, {"cells", r.cells}};
}
inline void from_json(const Json& j, GridRestriction& r) {
    r = GridRestriction::from_cells(j.at("host_depth").get<int>(), j.at("level").get<int>(),
                                    j.at("cells").get<std::vector<uint32_t>>());
}

inline void to_json(Json& j, const DiagonalDeviation& d) {
    j = Json{{"parent", d.parent}, {"child", d.child}, {"norm", d.norm}};
}
inline void from_json(const Json& j, DiagonalDeviation& d) {
    j.at("parent").get_to(d.parent);
    j.at("child").get_to(d.child);
    j.at("norm").get_to(d.norm);
}

// ----- concentration reports -----------------------------------------------

template <class V>
void to_json(Json& j, const SignSelection<V>& s) {
    j = Json{{"zeta", s.zeta},
             {"statistic", s.statistic},
             {"deviation", s.deviation},
             {"met", s.met},
             {"tries_used", s.tries_used}};
}
template <class V>
void from_json(const Json& j, SignSelection<V>& s) {
    j.at("zeta").get_to(s.zeta);
    j.at("statistic").get_to(s.statistic);
    j.at("deviation").get_to(s.deviation);
    j.at("met").get_to(s.met);
    j.at("tries_used").get_to(s.tries_used);
}

// ----- certificate chains -----------------------------------------------------

inline void to_json(Json& j, const FactorBound& fb) {
    j = Json{{"c", fb.c}, {"eps", fb.eps}};
}
inline void from_json(const Json& j, FactorBound& fb) {
    j.at("c").get_to(fb.c);
    j.at("eps").get_to(fb.eps);
}

inline void to_json(Json& j, const IceStep& s) {
    j = Json{{"name", s.name},
             {"kind", step_kind_name(s.kind)},
             {"projectional", s.projectional},
             {"fb", s.fb},
             {"source", s.source},
             {"target", s.target},
             {"truncate_depth", s.truncate_depth}};
    j["sys"] = s.sys ? Json(*s.sys) : Json(nullptr);
}

inline StepKind step_kind_from_name(const std::string& name) {
    for (StepKind k :
         {StepKind::conjugation, StepKind::rooted_conjugation, StepKind::truncation,
          StepKind::restriction, StepKind::approximation, StepKind::collapse,
          StepKind::tensor_lift})
        if (name == step_kind_name(k)) return k;
    throw std::invalid_argument("unknown step kind: '" + name + "'");
}

inline void from_json(const Json& j, IceStep& s) {
    j.at("name").get_to(s.name);
    s.kind = step_kind_from_name(j.at("kind").get<std::string>());
    j.at("projectional").get_to(s.projectional);
    j.at("fb").get_to(s.fb);
    j.at("source").get_to(s.source);
    j.at("target").get_to(s.target);
    j.at("truncate_depth").get_to(s.truncate_depth);
    if (!j.at("sys").is_null()) s.sys = j.at("sys").get<FaithfulHaarSystem>();
    else s.sys.reset();
}

inline void to_json(Json& j, const IceCertificate& c) {
    j = Json{{"steps", c.steps},
             {"lambda", c.lambda},
             {"out_depth", c.out_depth},
             {"total", c.total},
             {"budget_met", c.budget_met},
             {"search", c.search},
             {"requested_eps", c.requested_eps}};
}
inline void from_json(const Json& j, IceCertificate& c) {
    j.at("steps").get_to(c.steps);
    j.at("lambda").get_to(c.lambda);
    j.at("out_depth").get_to(c.out_depth);
    j.at("total").get_to(c.total);
    j.at("budget_met").get_to(c.budget_met);
    j.at("search").get_to(c.search);
    j.at("requested_eps").get_to(c.requested_eps);
}

inline void to_json(Json& j, const PipelineStep& s) {
    j = Json{{"name", s.name},
             {"kind", step_kind_name(s.kind)},
             {"projectional", s.projectional},
             {"fb", s.fb},
             {"source", s.source},
             {"target", s.target},
             {"x", s.x},
             {"coarse_outer", s.coarse_outer},
             {"coarse_inner", s.coarse_inner}};
    j["outer_sys"] = s.outer_sys ? Json(*s.outer_sys) : Json(nullptr);
    j["inner_sys"] = s.inner_sys ? Json(*s.inner_sys) : Json(nullptr);
    j["restriction"] = s.restriction ? Json(*s.restriction) : Json(nullptr);
    j["lifted"] = s.lifted ? Json(*s.lifted) : Json(nullptr);
}
inline void from_json(const Json& j, PipelineStep& s) {
    j.at("name").get_to(s.name);
    s.kind = step_kind_from_name(j.at("kind").get<std::string>());
    j.at("projectional").get_to(s.projectional);
    j.at("fb").get_to(s.fb);
    j.at("source").get_to(s.source);
    j.at("target").get_to(s.target);
    j.at("x").get_to(s.x);
    j.at("coarse_outer").get_to(s.coarse_outer);
    j.at("coarse_inner").get_to(s.coarse_inner);
    s.outer_sys.reset();
    s.inner_sys.reset();
    s.restriction.reset();
    s.lifted.reset();
    if (!j.at("outer_sys").is_null()) s.outer_sys = j.at("outer_sys").get<FaithfulHaarSystem>();
    if (!j.at("inner_sys").is_null()) s.inner_sys = j.at("inner_sys").get<FaithfulHaarSystem>();
    if (!j.at("restriction").is_null()) s.restriction = j.at("restriction").get<GridRestriction>();
    if (!j.at("lifted").is_null()) s.lifted = j.at("lifted").get<IceCertificate>();
}

inline void to_json(Json& j, const StableDiagonalReport& r) {
    j = Json{{"before", r.before},
             {"after", r.after},
             {"schedule_before", r.schedule_before},
             {"schedule_after", r.schedule_after},
             {"method", r.method},
             {"advised_n", r.advised_n},
             {"selection", r.selection}};
}
inline void from_json(const Json& j, StableDiagonalReport& r) {
    j.at("before").get_to(r.before);
    j.at("after").get_to(r.after);
    j.at("schedule_before").get_to(r.schedule_before);
    j.at("schedule_after").get_to(r.schedule_after);
    j.at("method").get_to(r.method);
    j.at("advised_n").get_to(r.advised_n);
    j.at("selection").get_to(r.selection);
}

inline void to_json(Json& j, const CollapseBounds& b) {
    j = Json{{"table", b.table},
             {"telescoped", b.telescoped},
             {"direct", b.direct},
             {"achieved", b.achieved}};
}
inline void from_json(const Json& j, CollapseBounds& b) {
    j.at("table").get_to(b.table);
    j.at("telescoped").get_to(b.telescoped);
    j.at("direct").get_to(b.direct);
    j.at("achieved").get_to(b.achieved);
}

inline void to_json(Json& j, const CollapseReport& r) {
    j = Json{{"eps_effective", r.eps_effective},
             {"seven_eps", r.seven_eps},
             {"bounds", r.bounds},
             {"sampled_lower", r.sampled_lower},
             {"seven_ok", r.seven_ok}};
}
inline void from_json(const Json& j, CollapseReport& r) {
    j.at("eps_effective").get_to(r.eps_effective);
    j.at("seven_eps").get_to(r.seven_eps);
    j.at("bounds").get_to(r.bounds);
    j.at("sampled_lower").get_to(r.sampled_lower);
    j.at("seven_ok").get_to(r.seven_ok);
}

inline void to_json(Json& j, const PipelineOptions& o) {
    j = Json{{"eps", o.eps},
             {"out_outer", o.out_outer},
             {"out_inner", o.out_inner},
             {"seed", o.seed},
             {"tries", o.tries},
             {"heavy_outer_cap", o.heavy_outer_cap},
             {"heavy_inner_cap", o.heavy_inner_cap}};
}
inline void from_json(const Json& j, PipelineOptions& o) {
    j.at("eps").get_to(o.eps);
    j.at("out_outer").get_to(o.out_outer);
    j.at("out_inner").get_to(o.out_inner);
    j.at("seed").get_to(o.seed);
    j.at("tries").get_to(o.tries);
    j.at("heavy_outer_cap").get_to(o.heavy_outer_cap);
    j.at("heavy_inner_cap").get_to(o.heavy_inner_cap);
}

inline void to_json(Json& j, const PipelineReport& r) {
    j = Json{{"steps", r.steps},
             {"ice", r.ice},
             {"lambda", r.lambda},
             {"total", r.total},
             {"completed", r.completed},
             {"budget_met", r.budget_met},
             {"failed_stage", r.failed_stage},
             {"stable", r.stable},
             {"collapse", r.collapse},
             {"x", r.x},
             {"options", r.options},
             {"out_outer", r.out_outer},
             {"out_inner", r.out_inner}};
}
inline void from_json(const Json& j, PipelineReport& r) {
    j.at("steps").get_to(r.steps);
    j.at("ice").get_to(r.ice);
    j.at("lambda").get_to(r.lambda);
    j.at("total").get_to(r.total);
    j.at("completed").get_to(r.completed);
    j.at("budget_met").get_to(r.budget_met);
    j.at("failed_stage").get_to(r.failed_stage);
    j.at("stable").get_to(r.stable);
    j.at("collapse").get_to(r.collapse);
    j.at("x").get_to(r.x);
    j.at("options").get_to(r.options);
    j.at("out_outer").get_to(r.out_outer);
    j.at("out_inner").get_to(r.out_inner);
}

inline void to_json(Json& j, const PrimarinessVerdict& v) {
    j = Json{{"complement_branch", v.complement_branch},
             {"lambda_effective", v.lambda_effective},
             {"factor_constant", v.factor_constant},
             {"neumann_bound", v.neumann_bound},
             {"contraction", v.contraction},
             {"residual", v.residual},
             {"terms", v.terms},
             {"ok", v.ok}};
}
inline void from_json(const Json& j, PrimarinessVerdict& v) {
    j.at("complement_branch").get_to(v.complement_branch);
    j.at("lambda_effective").get_to(v.lambda_effective);
    j.at("factor_constant").get_to(v.factor_constant);
    j.at("neumann_bound").get_to(v.neumann_bound);
    j.at("contraction").get_to(v.contraction);
    j.at("residual").get_to(v.residual);
    j.at("terms").get_to(v.terms);
    j.at("ok").get_to(v.ok);
}

// ----- artifact envelope ------------------------------------------------------

inline Json make_artifact(const std::string& kind, Json payload) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = kind;
    j["payload"] = std::move(payload);
    return j;
}

inline std::string dump_artifact(const Json& artifact) { return artifact.dump(2) + "\n"; }

inline Json parse_artifact(const std::string& text, const std::string& expect_kind = "") {
    Json j = Json::parse(text);
    if (!j.contains("schema_version") || j.at("schema_version").get<int>() != kSchemaVersion)
        throw std::invalid_argument("unsupported or missing schema_version");
    if (!expect_kind.empty() && j.at("kind").get<std::string>() != expect_kind)
        throw std::invalid_argument("expected a '" + expect_kind + "' artifact, found '" +
                                    j.at("kind").get<std::string>() + "'");
    return j.at("payload");
}

inline void save_artifact(const std::string& path, const std::string& kind, const Json& payload) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << dump_artifact(make_artifact(kind, payload));
}

inline Json load_artifact(const std::string& path, const std::string& expect_kind = "") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_artifact(buf.str(), expect_kind);
}

}  // namespace haarfact
