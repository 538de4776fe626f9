#include "evplan/road_network.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <queue>

#include "evplan/errors.hpp"
#include "json.hpp"

namespace evplan {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

RoadNetwork::RoadNetwork(std::vector<RoadNode> nodes, std::vector<RoadEdge> edges)
    : nodes_(std::move(nodes)), edges_(std::move(edges)) {
    index_.reserve(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!index_.emplace(nodes_[i].id, i).second)
            throw ConfigError("duplicate node id " + std::to_string(nodes_[i].id));
    }
    adjacency_.resize(nodes_.size());
    for (const RoadEdge& e : edges_) {
        if (e.length_km <= 0.0)
            throw ConfigError("edge length must be positive (edge " + std::to_string(e.a) +
                              "-" + std::to_string(e.b) + ")");
        auto ia = index_.find(e.a);
        auto ib = index_.find(e.b);
        if (ia == index_.end() || ib == index_.end())
            throw ConfigError("edge references unknown node (edge " + std::to_string(e.a) +
                              "-" + std::to_string(e.b) + ")");
        adjacency_[ia->second].emplace_back(ib->second, e.length_km);
        adjacency_[ib->second].emplace_back(ia->second, e.length_km);
    }
    for (auto& nbrs : adjacency_) {
        std::sort(nbrs.begin(), nbrs.end(), [this](const auto& l, const auto& r) {
            if (nodes_[l.first].id != nodes_[r.first].id)
                return nodes_[l.first].id < nodes_[r.first].id;
            return l.second < r.second;
        });
    }
}

const RoadNode& RoadNetwork::node(NodeId id) const {
    return nodes_[index_of(id)];
}

std::size_t RoadNetwork::index_of(NodeId id) const {
    auto it = index_.find(id);
    if (it == index_.end())
        throw UnknownNodeError("unknown node id " + std::to_string(id));
    return it->second;
}

std::vector<double> RoadNetwork::distances_from(NodeId source) const {
    std::size_t src = index_of(source);
    std::vector<double> dist(nodes_.size(), kInf);
    dist[src] = 0.0;
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    heap.emplace(0.0, src);
    while (!heap.empty()) {
        auto [d, u] = heap.top();
        heap.pop();
        if (d > dist[u]) continue;
        for (auto [v, w] : adjacency_[u]) {
            double nd = d + w;
            if (nd < dist[v]) {
                dist[v] = nd;
                heap.emplace(nd, v);
            }
        }
    }
    return dist;
}

Route shortest_path(const RoadNetwork& net, NodeId origin, NodeId dest) {
    std::size_t src = net.index_of(origin);
    std::size_t dst = net.index_of(dest);

    // Distances toward the destination, then a greedy walk from the origin
    // along the shortest-path DAG picking the smallest node id at each hop.
    // That walk is the lexicographically smallest of all minimal sequences.
    std::vector<double> to_dest = net.distances_from(dest);
    if (to_dest[src] == kInf)
        throw NoPathError("no route from node " + std::to_string(origin) + " to node " +
                          std::to_string(dest));

    Route route;
    route.nodes.push_back(origin);
    std::size_t u = src;
    while (u != dst) {
        std::size_t next = u;
        double step = 0.0;
        bool found = false;
        for (auto [v, w] : net.neighbors(u)) {
            if (std::abs(to_dest[u] - (w + to_dest[v])) <= 1e-12 * std::max(1.0, to_dest[u])) {
                next = v;
                step = w;
                found = true;
                break; // neighbors are id-sorted; the first hit is the smallest id
            }
        }
        if (!found)
            throw NoPathError("shortest-path walk failed between nodes " +
                              std::to_string(origin) + " and " + std::to_string(dest));
        route.nodes.push_back(net.nodes()[next].id);
        route.length_km += step;
        u = next;
    }
    return route;
}

double shortest_distance(const RoadNetwork& net, NodeId a, NodeId b) {
    std::size_t ib = net.index_of(b);
    net.index_of(a);
    return net.distances_from(a)[ib];
}

double deviating_distance(const RoadNetwork& net, NodeId origin, NodeId dest, NodeId station) {
    double direct = shortest_distance(net, origin, dest);
    if (direct == kInf)
        throw NoPathError("destination node " + std::to_string(dest) +
                          " unreachable from origin " + std::to_string(origin));
    double leg1 = shortest_distance(net, origin, station);
    if (leg1 == kInf)
        throw NoPathError("station node " + std::to_string(station) +
                          " unreachable from origin " + std::to_string(origin));
    double leg2 = shortest_distance(net, station, dest);
    if (leg2 == kInf)
        throw NoPathError("destination node " + std::to_string(dest) +
                          " unreachable from station " + std::to_string(station));
    double detour = leg1 + leg2 - direct;
    return detour < 0.0 ? 0.0 : detour;
}

int destination_indicator(const RoadNetwork& net, NodeId dest, NodeId station, double d_th_km) {
    if (d_th_km < 0.0)
        throw DomainError("proximity threshold must be nonnegative");
    double d = shortest_distance(net, dest, station);
    return d <= d_th_km ? 1 : 0;
}

RoadNetwork load_road_network(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in)
        throw ConfigError("cannot open road network file " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in " + file.string() + ": " + e.what());
    }
    std::vector<RoadNode> nodes;
    std::vector<RoadEdge> edges;
    try {
        for (const auto& n : j.at("nodes")) {
            RoadNode node;
            node.id = n.at("id").get<NodeId>();
            node.x_km = n.at("x").get<double>();
            node.y_km = n.at("y").get<double>();
            node.restaurant = n.value("restaurant", false);
            node.shopping = n.value("shopping", false);
            node.supermarket = n.value("supermarket", false);
            nodes.push_back(node);
        }
        for (const auto& e : j.at("edges")) {
            edges.push_back({e.at("a").get<NodeId>(), e.at("b").get<NodeId>(),
                             e.at("length").get<double>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad road network schema in " + file.string() + ": " + e.what());
    }
    return RoadNetwork(std::move(nodes), std::move(edges));
}

} // namespace evplan
