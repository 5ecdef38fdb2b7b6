//! Non-dominated sorting and crowding distance over `(fitness, complexity)`,
//! both minimized.

use super::Individual;

/// Strict Pareto dominance on minimized objective vectors.
pub fn dominates_objectives(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

pub fn dominates(a: &Individual, b: &Individual) -> bool {
    dominates_objectives(&a.objectives(), &b.objectives())
}

/// Fast non-dominated sort. Returns fronts of indices into `objs`; each
/// front lists its members in ascending index order.
pub fn sort_objectives(objs: &[[f64; 2]]) -> Vec<Vec<usize>> {
    let n = objs.len();
    let mut dominated_by_count = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates_objectives(&objs[i], &objs[j]) {
                dominates_list[i].push(j);
                dominated_by_count[j] += 1;
            } else if dominates_objectives(&objs[j], &objs[i]) {
                dominates_list[j].push(i);
                dominated_by_count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by_count[j] -= 1;
                if dominated_by_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

pub fn nondominated_sort(pop: &[Individual]) -> Vec<Vec<usize>> {
    let objs: Vec<[f64; 2]> = pop.iter().map(Individual::objectives).collect();
    sort_objectives(&objs)
}

/// Crowding distance within one front. Extremes of every objective with a
/// nonzero range are infinite; fronts of one or two members are all
/// infinite.
pub fn crowding_objectives(front: &[[f64; 2]]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut dist = vec![0.0; n];
    for m in 0..2 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| front[a][m].total_cmp(&front[b][m]).then(a.cmp(&b)));
        let lo = front[order[0]][m];
        let hi = front[order[n - 1]][m];
        let range = hi - lo;
        if range <= 0.0 || !range.is_finite() {
            continue;
        }
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        for k in 1..n - 1 {
            let i = order[k];
            dist[i] += (front[order[k + 1]][m] - front[order[k - 1]][m]) / range;
        }
    }
    dist
}

pub fn crowding_distance(front: &[Individual]) -> Vec<f64> {
    let objs: Vec<[f64; 2]> = front.iter().map(Individual::objectives).collect();
    crowding_objectives(&objs)
}

/// Assigns rank and crowding to every member of `pop`.
pub fn assign_rank_and_crowding(pop: &mut [Individual]) {
    for (rank, front) in nondominated_sort(pop).into_iter().enumerate() {
        let objs: Vec<[f64; 2]> = front.iter().map(|&i| pop[i].objectives()).collect();
        for (&i, c) in front.iter().zip(crowding_objectives(&objs)) {
            pop[i].rank = rank;
            pop[i].crowding = c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominance_examples() {
        assert!(dominates_objectives(&[0.1, 5.0], &[0.2, 7.0]));
        assert!(!dominates_objectives(&[0.1, 7.0], &[0.2, 5.0]));
        assert!(!dominates_objectives(&[0.2, 5.0], &[0.1, 7.0]));
        assert!(!dominates_objectives(&[0.1, 5.0], &[0.1, 5.0]));
    }

    #[test]
    fn chain_gives_singleton_fronts() {
        let f = sort_objectives(&[[3.0, 3.0], [1.0, 1.0], [2.0, 2.0]]);
        assert_eq!(f, vec![vec![1], vec![2], vec![0]]);
        assert_eq!(sort_objectives(&[[1.0, 1.0]]), vec![vec![0]]);
    }

    #[test]
    fn crowding_small_fronts() {
        assert_eq!(crowding_objectives(&[[1.0, 2.0]]), vec![f64::INFINITY]);
        assert_eq!(crowding_objectives(&[[1.0, 2.0], [2.0, 1.0]]), vec![f64::INFINITY; 2]);
    }

    #[test]
    fn crowding_of_evenly_spaced_points() {
        let front: Vec<[f64; 2]> = (0..5).map(|i| [i as f64 * 0.25, 3.0]).collect();
        let d = crowding_objectives(&front);
        assert!(d[0].is_infinite() && d[4].is_infinite());
        // (x_{k+1} - x_{k-1}) / range = 0.5 / 1.0
        for &v in &d[1..4] {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }
}
