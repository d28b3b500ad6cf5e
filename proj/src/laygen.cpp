#include "knolling/laygen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <tuple>

#include <json.hpp>

#include "knolling/parallel.hpp"
#include "knolling/rng.hpp"

namespace knolling {

namespace {

// Slot assignment the annealer searches over: which object sits in each
// slot, where the row breaks fall, and any extra spacing beyond the
// mandatory gap.
struct RowPlan {
    std::vector<int> perm;          // slot -> object index
    std::vector<uint8_t> new_row;   // new_row[i]: a row starts at slot i (index 0 implied)
    std::vector<double> pad;        // extra spacing before slot i (x within a row, y at a row start)
};

struct BuiltRows {
    Layout layout;  // in slot order
    double extent_x = 0.0;
    double extent_y = 0.0;
    bool feasible = false;
};

BuiltRows build_rows(const std::vector<ObjectSpec>& objects, const PackConfig& cfg,
                     const RowPlan& plan) {
    BuiltRows out;
    const size_t n = objects.size();
    out.layout.resize(n);
    double y_base = 0.0;
    double x_cursor = 0.0;
    double row_height = 0.0;
    double max_x = 0.0;
    size_t row_start = 0;
    for (size_t i = 0; i < n; ++i) {
        const bool starts_row = (i == 0) || plan.new_row[i];
        const ObjectSpec& spec = objects[plan.perm[i]];
        if (starts_row) {
            if (i > 0) y_base += row_height + cfg.gap + plan.pad[i];
            x_cursor = 0.0;
            row_height = 0.0;
            row_start = i;
        } else {
            x_cursor += cfg.gap + plan.pad[i];
        }
        (void)row_start;
        double x0 = x_cursor;
        x_cursor += spec.width;
        if (x_cursor > cfg.max_row_width + 1e-12) return out;  // row too wide
        row_height = std::max(row_height, spec.length);
        out.layout[i] = {spec, Pose2D{x0 + spec.width / 2, y_base + spec.length / 2, 0.0}};
        max_x = std::max(max_x, x_cursor);
    }
    out.extent_x = max_x;
    out.extent_y = y_base + row_height;
    out.feasible = true;
    return out;
}

// total order on layouts: area first, then the position sequence, so ties
// between equal-area arrangements resolve the same way on every run
struct LayoutKey {
    double area;
    std::vector<double> coords;

    bool operator<(const LayoutKey& other) const {
        if (area < other.area - 1e-12) return true;
        if (area > other.area + 1e-12) return false;
        return coords < other.coords;
    }
};

LayoutKey layout_key(const Layout& layout) {
    LayoutKey key{bounding_square_area(layout), {}};
    key.coords.reserve(layout.size() * 2);
    for (const auto& item : layout) {
        key.coords.push_back(item.pose.y);
        key.coords.push_back(item.pose.x);
    }
    return key;
}

RowPlan greedy_plan(const std::vector<ObjectSpec>& objects, const PackConfig& cfg) {
    const size_t n = objects.size();
    RowPlan plan;
    plan.perm.resize(n);
    std::iota(plan.perm.begin(), plan.perm.end(), 0);
    plan.new_row.assign(n, 0);
    plan.pad.assign(n, 0.0);
    double x_cursor = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double w = objects[i].width;
        if (w > cfg.max_row_width + 1e-12)
            throw UnpackableError("object " + std::to_string(i) + " wider than max_row_width");
        if (i > 0 && x_cursor + cfg.gap + w > cfg.max_row_width + 1e-12) {
            plan.new_row[i] = 1;
            x_cursor = w;
        } else {
            x_cursor += (i > 0 ? cfg.gap : 0.0) + w;
        }
    }
    return plan;
}

}  // namespace

Layout pack_rows(const std::vector<ObjectSpec>& objects, const PackConfig& cfg) {
    if (objects.empty()) throw std::invalid_argument("pack_rows: no objects");
    BuiltRows built = build_rows(objects, cfg, greedy_plan(objects, cfg));
    if (!built.feasible) throw UnpackableError("pack_rows: objects do not fit the row width");
    return built.layout;
}

double bounding_square_area(const Layout& layout) {
    if (layout.empty()) throw std::invalid_argument("bounding_square_area: empty layout");
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    for (const auto& item : layout) {
        const double c = std::cos(item.pose.yaw), s = std::sin(item.pose.yaw);
        const double hx = std::abs(c) * item.spec.width / 2 + std::abs(s) * item.spec.length / 2;
        const double hy = std::abs(s) * item.spec.width / 2 + std::abs(c) * item.spec.length / 2;
        x0 = std::min(x0, item.pose.x - hx);
        x1 = std::max(x1, item.pose.x + hx);
        y0 = std::min(y0, item.pose.y - hy);
        y1 = std::max(y1, item.pose.y + hy);
    }
    double side = std::max(x1 - x0, y1 - y0);
    return side * side;
}

Layout optimize_layout(const std::vector<ObjectSpec>& objects, const AnnealConfig& anneal,
                       const PackConfig& pack, const AnnealObserver& observer) {
    if (anneal.iterations < 1) throw std::invalid_argument("iterations must be >= 1");
    if (anneal.cooling_rate <= 0.0 || anneal.cooling_rate >= 1.0)
        throw std::invalid_argument("cooling_rate must be in (0, 1)");
    const Workspace ws{};
    const size_t n = objects.size();

    RowPlan state = greedy_plan(objects, pack);
    BuiltRows built = build_rows(objects, pack, state);
    if (!built.feasible) throw UnpackableError("optimize_layout: initial packing infeasible");
    double area = bounding_square_area(built.layout);

    RowPlan best_state = state;
    double best_area = area;
    if (observer) observer(0, best_area);

    Rng rng(anneal.seed);
    double temperature = anneal.initial_temperature;
    for (int it = 1; it < anneal.iterations; ++it) {
        RowPlan proposal = state;
        if (n >= 2) {
            double u = rng.uniform();
            if (u < 0.50) {
                int i = rng.uniform_int(0, static_cast<int>(n) - 1);
                int j = rng.uniform_int(0, static_cast<int>(n) - 2);
                if (j >= i) ++j;
                std::swap(proposal.perm[i], proposal.perm[j]);
            } else if (u < 0.85) {
                int b = rng.uniform_int(1, static_cast<int>(n) - 1);
                proposal.new_row[b] ^= 1;
                proposal.pad[b] = 0.0;
            } else {
                int i = rng.uniform_int(0, static_cast<int>(n) - 1);
                proposal.pad[i] = rng.uniform() < 0.5 ? 0.0 : rng.uniform(0.0, 0.004);
            }
        }
        BuiltRows trial = build_rows(objects, pack, proposal);
        temperature *= anneal.cooling_rate;
        if (!trial.feasible || trial.extent_x > ws.width + 1e-12 ||
            trial.extent_y > ws.height + 1e-12) {
            if (observer) observer(it, best_area);
            continue;
        }
        double trial_area = bounding_square_area(trial.layout);
        double delta = trial_area - area;
        bool accept = delta <= 0.0;
        if (!accept && temperature > 0.0) accept = rng.uniform() < std::exp(-delta / temperature);
        if (accept) {
            state = std::move(proposal);
            area = trial_area;
            if (area < best_area) {
                best_area = area;
                best_state = state;
            }
        }
        if (observer) observer(it, best_area);
    }

    // drop any leftover jitter: gaps collapse to the minimum, which can
    // only shrink the bounding square
    std::fill(best_state.pad.begin(), best_state.pad.end(), 0.0);
    BuiltRows final_rows = build_rows(objects, pack, best_state);
    if (anneal.iterations == 1) return final_rows.layout;

    // deterministic descent to a canonical local optimum: the tie-broken
    // key makes equal-area plateaus resolve identically across seeds
    LayoutKey key = layout_key(final_rows.layout);
    for (int round = 0; round < 64; ++round) {
        RowPlan best_move;
        bool found = false;
        auto consider = [&](const RowPlan& trial) {
            BuiltRows rows = build_rows(objects, pack, trial);
            if (!rows.feasible || rows.extent_x > ws.width + 1e-12 ||
                rows.extent_y > ws.height + 1e-12)
                return;
            LayoutKey trial_key = layout_key(rows.layout);
            if (trial_key < key) {
                key = std::move(trial_key);
                best_move = trial;
                found = true;
            }
        };
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = i + 1; j < n; ++j) {
                RowPlan trial = best_state;
                std::swap(trial.perm[i], trial.perm[j]);
                consider(trial);
            }
        }
        for (size_t b = 1; b < n; ++b) {
            RowPlan trial = best_state;
            trial.new_row[b] ^= 1;
            consider(trial);
            // relocating a break escapes single-toggle local optima
            for (size_t b2 = b + 1; b2 < n; ++b2) {
                RowPlan pair = best_state;
                pair.new_row[b] ^= 1;
                pair.new_row[b2] ^= 1;
                consider(pair);
            }
        }
        if (!found) break;
        best_state = best_move;
    }
    return build_rows(objects, pack, best_state).layout;
}

OrderingResult apply_ordering(const std::vector<ObjectSpec>& objects, OrderingRule rule) {
    std::vector<int> perm(objects.size());
    std::iota(perm.begin(), perm.end(), 0);
    auto key_of = [&](int i) {
        const auto& o = objects[i];
        switch (rule) {
            case OrderingRule::AreaDescending: return -o.area();
            case OrderingRule::AreaAscending: return o.area();
            case OrderingRule::AspectRatioDescending: return -o.aspect_ratio();
            case OrderingRule::AsGiven: return 0.0;
        }
        return 0.0;
    };
    if (rule != OrderingRule::AsGiven) {
        std::sort(perm.begin(), perm.end(), [&](int a, int b) {
            return std::make_tuple(key_of(a), objects[a].width, objects[a].length, a) <
                   std::make_tuple(key_of(b), objects[b].width, objects[b].length, b);
        });
    }
    OrderingResult out;
    out.permutation = perm;
    out.objects.reserve(objects.size());
    for (int i : perm) out.objects.push_back(objects[i]);
    return out;
}

std::optional<OrderingRule> ordering_rule_from_name(const std::string& name) {
    if (name == "as-given") return OrderingRule::AsGiven;
    if (name == "area-desc") return OrderingRule::AreaDescending;
    if (name == "area-asc") return OrderingRule::AreaAscending;
    if (name == "aspect-desc") return OrderingRule::AspectRatioDescending;
    return std::nullopt;
}

std::string ordering_rule_name(OrderingRule rule) {
    switch (rule) {
        case OrderingRule::AsGiven: return "as-given";
        case OrderingRule::AreaDescending: return "area-desc";
        case OrderingRule::AreaAscending: return "area-asc";
        case OrderingRule::AspectRatioDescending: return "aspect-desc";
    }
    return "?";
}

std::vector<ObjectSpec> group_equal_adjacent(const std::vector<ObjectSpec>& objects) {
    std::vector<ObjectSpec> out;
    out.reserve(objects.size());
    std::vector<bool> used(objects.size(), false);
    for (size_t i = 0; i < objects.size(); ++i) {
        if (used[i]) continue;
        for (size_t j = i; j < objects.size(); ++j) {
            if (!used[j] && objects[j] == objects[i]) {
                out.push_back(objects[j]);
                used[j] = true;
            }
        }
    }
    return out;
}

void generate_dataset(const GenConfig& cfg,
                      const std::function<void(size_t, const ScenarioRecord&)>& sink) {
    if (cfg.count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
    if (cfg.n_min < 1 || cfg.n_max > kMaxObjects || cfg.n_min > cfg.n_max)
        throw std::invalid_argument("generate_dataset: bad n range");
    std::vector<ScenarioRecord> records(cfg.count);
    int threads = cfg.threads > 0 ? cfg.threads : env_threads();
    parallel_for(cfg.count, threads, [&](size_t i) {
        Rng rng(Rng::derive(cfg.seed, 2 * i));
        int n = rng.uniform_int(cfg.n_min, cfg.n_max);
        std::vector<ObjectSpec> objects(n);
        for (auto& o : objects) {
            o.width = rng.uniform(kMinObjectSide, kMaxObjectSide);
            o.length = rng.uniform(kMinObjectSide, kMaxObjectSide);
        }
        objects = group_equal_adjacent(objects);
        AnnealConfig anneal = cfg.anneal;
        anneal.seed = Rng::derive(cfg.seed, 2 * i + 1);
        records[i] = record_from_layout(optimize_layout(objects, anneal, cfg.pack));
    });
    for (size_t i = 0; i < cfg.count; ++i) sink(i, records[i]);
}

std::vector<ScenarioRecord> generate_dataset(const GenConfig& cfg) {
    std::vector<ScenarioRecord> out;
    out.reserve(cfg.count);
    generate_dataset(cfg, [&](size_t, const ScenarioRecord& r) { out.push_back(r); });
    return out;
}

std::string encode_record(const ScenarioRecord& record) {
    nlohmann::json j;
    j["n"] = record.objects.size();
    auto& objs = j["objects"] = nlohmann::json::array();
    for (const auto& o : record.objects) objs.push_back({o.width, o.length});
    auto& tgts = j["targets"] = nlohmann::json::array();
    for (const auto& t : record.targets) tgts.push_back({t.x, t.y});
    return j.dump();
}

ScenarioRecord decode_record(const std::string& line, size_t line_number) {
    auto fail = [&](const std::string& what) -> ParseError {
        return ParseError("line " + std::to_string(line_number) + ": " + what);
    };
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw fail(e.what());
    }
    if (!j.is_object() || !j.contains("n") || !j.contains("objects") || !j.contains("targets"))
        throw fail("record must have n, objects and targets");
    ScenarioRecord record;
    try {
        size_t n = j.at("n").get<size_t>();
        for (const auto& o : j.at("objects"))
            record.objects.push_back({o.at(0).get<double>(), o.at(1).get<double>()});
        for (const auto& t : j.at("targets"))
            record.targets.push_back({t.at(0).get<double>(), t.at(1).get<double>()});
        if (record.objects.size() != n || record.targets.size() != n)
            throw fail("n does not match objects/targets lengths");
    } catch (const nlohmann::json::exception& e) {
        throw fail(e.what());
    }
    return record;
}

void write_dataset(const std::string& path, const std::vector<ScenarioRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& r : records) out << encode_record(r) << '\n';
}

std::vector<ScenarioRecord> read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::vector<ScenarioRecord> out;
    std::string line;
    size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        out.push_back(decode_record(line, line_number));
    }
    return out;
}

bool gaps_respected(const Layout& layout, double gap, double tol) {
    const size_t n = layout.size();
    std::vector<Aabb> boxes(n);
    for (size_t i = 0; i < n; ++i)
        boxes[i] = footprint(layout[i].spec, {layout[i].pose.x, layout[i].pose.y});
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            const auto& a = boxes[i];
            const auto& b = boxes[j];
            double px = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
            double py = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
            if (px > tol && py > tol) return false;  // overlap
            if (px > tol && -py < gap - tol) return false;
            if (py > tol && -px < gap - tol) return false;
        }
    }
    return true;
}

}  // namespace knolling
