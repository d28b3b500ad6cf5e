#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "knolling/core.hpp"

namespace knolling {

struct PackConfig {
    double gap = 0.005;                  // spacing between row/column neighbors
    double max_row_width = kWorkspaceSide;
};

struct AnnealConfig {
    int iterations = 10000;
    double initial_temperature = 1e-3;   // area units (m^2)
    double cooling_rate = 0.9995;        // per iteration
    uint64_t seed = 0;
};

enum class OrderingRule {
    AsGiven,
    AreaDescending,
    AreaAscending,
    AspectRatioDescending,
};

struct UnpackableError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Greedy row packer: objects go left-to-right in input order, a new row
// starts when the next object would exceed max_row_width, rows are stacked
// bottom-up. The deterministic oracle the annealer starts from.
Layout pack_rows(const std::vector<ObjectSpec>& objects, const PackConfig& cfg = {});

// s^2 where s is the larger side of the union bounding box.
double bounding_square_area(const Layout& layout);

// Called once per annealing iteration with the best objective so far.
using AnnealObserver = std::function<void(int iteration, double best_area)>;

// Simulated annealing over slot swaps, row-break moves and gap jitter,
// minimizing the bounding-square area. Hard constraints (non-overlap,
// min gap, in-workspace) hold for every accepted state. The returned
// layout lists objects in canonical slot order.
Layout optimize_layout(const std::vector<ObjectSpec>& objects, const AnnealConfig& anneal,
                       const PackConfig& pack = {}, const AnnealObserver& observer = {});

struct OrderingResult {
    std::vector<ObjectSpec> objects;
    std::vector<int> permutation;  // objects[i] == input[permutation[i]]
};

OrderingResult apply_ordering(const std::vector<ObjectSpec>& objects, OrderingRule rule);

std::optional<OrderingRule> ordering_rule_from_name(const std::string& name);
std::string ordering_rule_name(OrderingRule rule);

// Moves exactly-equal (width, length) objects into adjacent slots,
// preserving first-seen group order.
std::vector<ObjectSpec> group_equal_adjacent(const std::vector<ObjectSpec>& objects);

struct GenConfig {
    size_t count = 1;
    int n_min = 2;
    int n_max = kMaxObjects;
    AnnealConfig anneal;
    PackConfig pack;
    uint64_t seed = 0;
    int threads = 0;  // 0: env/hardware
};

// Deterministic given the seed: scenario i uses child seeds derived from
// (seed, i), and the sink always runs in index order.
void generate_dataset(const GenConfig& cfg,
                      const std::function<void(size_t, const ScenarioRecord&)>& sink);
std::vector<ScenarioRecord> generate_dataset(const GenConfig& cfg);

// One-line JSON encoding: {"n":...,"objects":[[w,l],...],"targets":[[x,y],...]}
std::string encode_record(const ScenarioRecord& record);
ScenarioRecord decode_record(const std::string& line, size_t line_number = 0);

void write_dataset(const std::string& path, const std::vector<ScenarioRecord>& records);
std::vector<ScenarioRecord> read_dataset(const std::string& path);

// Neighbor gap check used by the generator validity gate: any two
// rectangles whose projections overlap on one axis must be separated by at
// least `gap` on the other.
bool gaps_respected(const Layout& layout, double gap, double tol = 1e-9);

}  // namespace knolling
