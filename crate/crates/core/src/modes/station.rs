use super::world::{leg_ms, Ev, Res, UserIdx, World};
use super::LB_MM_PER_M;
use crate::engine::Agenda;
use crate::metrics::{Activity, OdoClass, Record, UnservedReason};

const SALT_BIKE: u64 = 0x6272;
const SALT_DOCK: u64 = 0x646b;

impl World<'_> {
    fn station_node(&self, s: u32) -> u32 {
        self.sc.stations[s as usize].node
    }

    fn docked(&self, s: u32) -> usize {
        self.docks[s as usize].len()
    }

    fn free_docks(&self, s: u32) -> usize {
        self.sc.stations[s as usize].capacity as usize - self.docked(s)
    }

    fn occupancy(&mut self, now: u64, s: u32) -> Res {
        let docked = self.docked(s) as u32;
        self.rec(now, Record::Occupancy { station: s, docked })
    }

    /// Moves the oldest bike of `from` to `to`, instantly.
    fn teleport(&mut self, now: u64, from: u32, to: u32) -> Res {
        let bike = self.docks[from as usize].pop_front().ok_or("teleport from an empty station")?;
        self.docks[to as usize].push_back(bike);
        self.bikes[bike as usize].node = self.station_node(to);
        self.rec(now, Record::Rebalanced { bike, from, to })?;
        self.occupancy(now, from)?;
        self.occupancy(now, to)
    }

    /// Stations within the walk radius of `node` with their walking
    /// distances, sorted by (distance, id).
    fn walkable(&self, node: u32) -> std::result::Result<Vec<(u64, u32)>, String> {
        let p = self.sc.location(node);
        let mut out = self
            .station_grid
            .within(&p, self.cfg.walk_radius_m)
            .into_iter()
            .map(|c| Ok((self.dist(node, self.station_node(c.id))?, c.id)))
            .collect::<std::result::Result<Vec<_>, String>>()?;
        out.sort_unstable();
        Ok(out)
    }

    /// Nearest station (by road distance to `target`) other than `target`
    /// satisfying `ok`.
    fn nearest_station_to(&self, target: u32, ok: impl Fn(&Self, u32) -> bool) -> Option<u32> {
        let tn = self.station_node(target);
        let p = self.sc.location(tn);
        self.station_grid
            .nearest_by(&p, None, LB_MM_PER_M, |c| {
                (c.id != target && ok(self, c.id))
                    .then(|| self.sc.router.distance(self.station_node(c.id), tn))
                    .flatten()
            })
            .map(|x| x.0)
    }

    pub(super) fn sb_seek_bike(&mut self, now: u64, u: UserIdx, ag: &mut dyn Agenda<Ev>) -> Res {
        let pos = self.users[u as usize].pos;
        let walkable = self.walkable(pos)?;
        if walkable.is_empty() {
            return self.unserved(now, u, UnservedReason::NoWalkableStations);
        }
        let target = match walkable.iter().find(|(_, s)| self.docked(*s) > 0) {
            Some(&(_, s)) => s,
            None => {
                let (_, t) = walkable[0];
                let min_bikes = self.cfg.min_bikes_docks as usize;
                let source = self.nearest_station_to(t, |w, s| w.docked(s) > min_bikes);
                match source {
                    Some(src) if self.coin(u, SALT_BIKE) => {
                        self.teleport(now, src, t)?;
                        t
                    }
                    _ => return self.unserved(now, u, UnservedReason::NoBikes),
                }
            }
        };
        let mm = self.dist(pos, self.station_node(target))?;
        let ms = leg_ms(mm, self.cfg.walking_speed_kmh);
        self.users[u as usize].walk_origin_ms += ms;
        ag.schedule(ms, Ev::AtStation { user: u, station: target });
        Ok(())
    }

    pub(super) fn sb_at_station(&mut self, now: u64, u: UserIdx, s: u32, ag: &mut dyn Agenda<Ev>) -> Res {
        self.users[u as usize].pos = self.station_node(s);
        let Some(bike) = self.docks[s as usize].pop_front() else {
            // Taken while the user was walking.
            if self.give_up(now, u)? {
                return Ok(());
            }
            return self.sb_seek_bike(now, u, ag);
        };
        self.occupancy(now, s)?;
        self.users[u as usize].bike = bike;
        self.set_activity(now, bike, Activity::InUse)?;
        self.sb_seek_dock(now, u, ag)
    }

    /// Picks the dock to ride to: the free station closest to the
    /// destination within the walk radius, else a β dock rebalancing at the
    /// closest walkable station, else the closest free station anywhere.
    fn sb_seek_dock(&mut self, now: u64, u: UserIdx, ag: &mut dyn Agenda<Ev>) -> Res {
        let dest = self.trip(u).destination;
        let near = {
            let p = self.sc.location(dest);
            let mut v = self
                .station_grid
                .within(&p, self.cfg.walk_radius_m)
                .into_iter()
                .map(|c| Ok((self.dist(self.station_node(c.id), dest)?, c.id)))
                .collect::<std::result::Result<Vec<_>, String>>()?;
            v.sort_unstable();
            v
        };
        let mut target = near.iter().find(|(_, s)| self.free_docks(*s) > 0).map(|x| x.1);
        if target.is_none() && !near.is_empty() {
            let t = near[0].1;
            let min_docks = self.cfg.min_bikes_docks as usize;
            if let Some(sink) = self.nearest_station_to(t, |w, s| w.free_docks(s) > min_docks) {
                if self.coin(u, SALT_DOCK) {
                    self.teleport(now, t, sink)?;
                    target = Some(t);
                }
            }
        }
        let target = match target {
            Some(t) => t,
            None => {
                let p = self.sc.location(dest);
                self.station_grid
                    .nearest_by(&p, None, LB_MM_PER_M, |c| {
                        (self.free_docks(c.id) > 0)
                            .then(|| self.sc.router.distance(self.station_node(c.id), dest))
                            .flatten()
                    })
                    .ok_or("no free dock in the system")?
                    .0
            }
        };
        let pos = self.users[u as usize].pos;
        let mm = self.dist(pos, self.station_node(target))?;
        let ms = leg_ms(mm, self.cfg.riding_speed_kmh);
        let t = &mut self.users[u as usize];
        t.leg_mm = mm;
        t.ride_ms += ms;
        ag.schedule(ms, Ev::AtDock { user: u, station: target });
        Ok(())
    }

    pub(super) fn sb_at_dock(&mut self, now: u64, u: UserIdx, s: u32, ag: &mut dyn Agenda<Ev>) -> Res {
        let bike = self.users[u as usize].bike;
        let node = self.station_node(s);
        let mm = self.users[u as usize].leg_mm;
        self.rec(now, Record::Move { bike, class: OdoClass::InUse, mm, soc: None })?;
        self.bikes[bike as usize].node = node;
        self.users[u as usize].pos = node;
        if self.free_docks(s) == 0 {
            // Filled up during the ride; search again from here.
            return self.sb_seek_dock(now, u, ag);
        }
        self.docks[s as usize].push_back(bike);
        self.occupancy(now, s)?;
        self.set_activity(now, bike, Activity::Idle)?;
        let walk = self.dist(node, self.trip(u).destination)?;
        let ms = leg_ms(walk, self.cfg.walking_speed_kmh);
        self.users[u as usize].walk_dest_ms = ms;
        ag.schedule(ms, Ev::AtDestination { user: u });
        Ok(())
    }
}
