#pragma once

#include <filesystem>
#include <unordered_map>
#include <vector>

namespace evplan {

using NodeId = int;

struct RoadNode {
    NodeId id = 0;
    double x_km = 0.0;
    double y_km = 0.0;
    bool restaurant = false;
    bool shopping = false;
    bool supermarket = false;
};

struct RoadEdge {
    NodeId a = 0;
    NodeId b = 0;
    double length_km = 0.0;
};

/// A walk through the network; length is the sum of edge lengths.
struct Route {
    std::vector<NodeId> nodes;
    double length_km = 0.0;
};

/// Undirected weighted road graph. Immutable after construction; queries are
/// const and safe to run concurrently.
class RoadNetwork {
public:
    RoadNetwork(std::vector<RoadNode> nodes, std::vector<RoadEdge> edges);

    const std::vector<RoadNode>& nodes() const { return nodes_; }
    const std::vector<RoadEdge>& edges() const { return edges_; }

    bool has_node(NodeId id) const { return index_.count(id) != 0; }
    const RoadNode& node(NodeId id) const;
    std::size_t index_of(NodeId id) const;

    // neighbors sorted by node id, so traversal order never depends on
    // edge insertion order
    const std::vector<std::pair<std::size_t, double>>& neighbors(std::size_t idx) const {
        return adjacency_[idx];
    }

    /// Distances from `source` to every node (infinity when unreachable).
    std::vector<double> distances_from(NodeId source) const;

private:
    std::vector<RoadNode> nodes_;
    std::vector<RoadEdge> edges_;
    std::unordered_map<NodeId, std::size_t> index_;
    std::vector<std::vector<std::pair<std::size_t, double>>> adjacency_;
};

/// Minimal-length route; ties broken by lexicographically smallest node
/// sequence. Throws UnknownNodeError / NoPathError.
Route shortest_path(const RoadNetwork& net, NodeId origin, NodeId dest);

/// Shortest-path length only (no sequence); infinity when unreachable.
double shortest_distance(const RoadNetwork& net, NodeId a, NodeId b);

/// Extra kilometers incurred by visiting `station` on the way from `origin`
/// to `dest`: len(origin->station) + len(station->dest) - len(origin->dest).
double deviating_distance(const RoadNetwork& net, NodeId origin, NodeId dest, NodeId station);

/// 1 when the station lies within `d_th_km` (inclusive) of the destination.
int destination_indicator(const RoadNetwork& net, NodeId dest, NodeId station, double d_th_km);

/// Load a network from JSON: {"nodes": [{id,x,y,restaurant,shopping,
/// supermarket}], "edges": [{a,b,length}]}. Lengths in kilometers.
RoadNetwork load_road_network(const std::filesystem::path& file);

} // namespace evplan
