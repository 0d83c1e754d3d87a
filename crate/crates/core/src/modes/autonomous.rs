use super::world::{leg_ms, Ev, Leg, Res, UserIdx, World};
use super::{assign_bike, discharge, RebalancingScenario, LB_MM_PER_M};
use crate::engine::Agenda;
use crate::geo::NodeId;
use crate::metrics::{Activity, Mode, OdoClass, Record, UnservedReason};
use crate::rebalance::{default_lambda, plan_moves, slot_of, IdleBike, SLOT_MS};

impl World<'_> {
    fn drive(&mut self, now: u64, bike: u32, class: OdoClass, mm: u64) -> Res {
        let b = &mut self.bikes[bike as usize];
        b.soc = discharge(b.soc, mm, &self.cfg.battery);
        let soc = Some(b.soc);
        self.rec(now, Record::Move { bike, class, mm, soc })
    }

    pub(super) fn au_request(&mut self, now: u64, u: UserIdx, ag: &mut dyn Agenda<Ev>) -> Res {
        let trip = self.trip(u);
        let ride_mm = self.dist(trip.origin, trip.destination)?;
        self.users[u as usize].ride_mm = ride_mm;
        let ideal = self.cfg.rebalancing == RebalancingScenario::Ideal;
        let radius = (!ideal).then_some(self.cfg.autonomous_radius_m);
        self.advance_legs(now)?;
        let found = assign_bike(
            &self.available,
            &self.bikes,
            self.sc.router.as_ref(),
            &self.sc.net,
            trip.origin,
            radius,
            &self.cfg.battery,
            ride_mm,
        );
        let Some((bike, mm)) = found else {
            return self.unserved(now, u, UnservedReason::NoAssignableBike);
        };
        self.available.remove(bike);
        if let Some(leg) = self.legs.remove(&bike) {
            ag.cancel(leg.handle);
        }
        self.users[u as usize].bike = bike;
        if ideal {
            // The bike appears at once; its drive counts as use.
            self.drive(now, bike, OdoClass::InUse, mm)?;
            self.bikes[bike as usize].node = trip.origin;
            return self.au_start_ride(now, u, ag);
        }
        self.set_activity(now, bike, Activity::Pickup)?;
        let ms = leg_ms(mm, self.cfg.autonomous_speed_kmh);
        let t = &mut self.users[u as usize];
        t.leg_mm = mm;
        t.wait_ms = ms;
        ag.schedule(ms, Ev::PickedUp { user: u });
        Ok(())
    }

    fn au_start_ride(&mut self, now: u64, u: UserIdx, ag: &mut dyn Agenda<Ev>) -> Res {
        let bike = self.users[u as usize].bike;
        self.set_activity(now, bike, Activity::InUse)?;
        let t = &mut self.users[u as usize];
        t.leg_mm = t.ride_mm;
        t.ride_ms = leg_ms(t.ride_mm, self.cfg.riding_speed_kmh);
        ag.schedule(t.ride_ms, Ev::Dropoff { user: u });
        Ok(())
    }

    pub(super) fn au_picked_up(&mut self, now: u64, u: UserIdx, ag: &mut dyn Agenda<Ev>) -> Res {
        let bike = self.users[u as usize].bike;
        self.drive(now, bike, OdoClass::Pickup, self.users[u as usize].leg_mm)?;
        self.bikes[bike as usize].node = self.trip(u).origin;
        self.au_start_ride(now, u, ag)
    }

    /// End of a ride in dockless or autonomous mode.
    pub(super) fn dropoff(&mut self, now: u64, u: UserIdx, ag: &mut dyn Agenda<Ev>) -> Res {
        let bike = self.users[u as usize].bike;
        let mm = self.users[u as usize].leg_mm;
        let dest = self.trip(u).destination;
        if self.cfg.mode == Mode::Autonomous {
            self.drive(now, bike, OdoClass::InUse, mm)?;
        } else {
            self.rec(now, Record::Move { bike, class: OdoClass::InUse, mm, soc: None })?;
        }
        self.bikes[bike as usize].node = dest;
        self.served(now, u)?;
        if self.cfg.mode == Mode::Autonomous {
            self.battery_check(now, bike, ag)
        } else {
            self.make_available(now, bike)
        }
    }

    fn make_available(&mut self, now: u64, bike: u32) -> Res {
        self.set_activity(now, bike, Activity::Idle)?;
        let loc = self.sc.location(self.bikes[bike as usize].node);
        self.available.insert(bike, loc);
        Ok(())
    }

    /// Sends a bike below the minimum level to the nearest charging site;
    /// otherwise it becomes idle where it stands.
    fn battery_check(&mut self, now: u64, bike: u32, ag: &mut dyn Agenda<Ev>) -> Res {
        let b = self.bikes[bike as usize];
        if b.soc >= self.cfg.battery.min_level {
            return self.make_available(now, bike);
        }
        let p = self.sc.location(b.node);
        let (station, mm) = self
            .station_grid
            .nearest_by(&p, None, LB_MM_PER_M, |c| {
                self.sc.router.distance(b.node, self.sc.stations[c.id as usize].node)
            })
            .ok_or("no reachable charging site")?;
        self.set_activity(now, bike, Activity::ToCharger)?;
        let range = self.cfg.battery.range_mm(b.soc);
        if mm as f64 <= range {
            ag.schedule(leg_ms(mm, self.cfg.autonomous_speed_kmh), Ev::Plug { bike, station, mm });
            return Ok(());
        }
        // Runs dry on the way; it stops at the last node it reaches.
        let reach = range.floor() as u64;
        let route =
            self.sc.router.route(b.node, self.sc.stations[station as usize].node).ok_or("charging route vanished")?;
        let cum = route.cumulative_mm(&self.sc.net);
        let last = cum.iter().rposition(|&c| c <= reach).unwrap_or(0);
        let node = route.nodes[last];
        ag.schedule(leg_ms(reach, self.cfg.autonomous_speed_kmh), Ev::Strand { bike, mm: reach, node });
        Ok(())
    }

    pub(super) fn au_plug(&mut self, now: u64, bike: u32, station: u32, mm: u64, ag: &mut dyn Agenda<Ev>) -> Res {
        self.drive(now, bike, OdoClass::Charge, mm)?;
        let b = &mut self.bikes[bike as usize];
        b.node = self.sc.stations[station as usize].node;
        let soc = b.soc;
        self.rec(now, Record::Plugged { bike, station, soc })?;
        self.set_activity(now, bike, Activity::Charging)?;
        let ms = (self.cfg.battery.recharge_time_h * 3_600_000.0 * (1.0 - soc)).round() as u64;
        ag.schedule(ms, Ev::ChargeDone { bike });
        Ok(())
    }

    pub(super) fn au_charged(&mut self, now: u64, bike: u32) -> Res {
        self.bikes[bike as usize].soc = 1.0;
        self.rec(now, Record::Charged { bike })?;
        self.make_available(now, bike)
    }

    pub(super) fn au_strand(&mut self, now: u64, bike: u32, mm: u64, node: NodeId) -> Res {
        self.drive(now, bike, OdoClass::Charge, mm)?;
        self.bikes[bike as usize].node = node;
        self.rec(now, Record::Stranded { bike })?;
        self.set_activity(now, bike, Activity::Stranded)
    }

    /// Predictive rebalancing: forecast the demand `P` slots ahead, solve the
    /// transportation problem over idle bikes and dispatch the moves.
    pub(super) fn au_tick(&mut self, now: u64, ag: &mut dyn Agenda<Ev>) -> Res {
        let pred = self.cfg.prediction;
        let next = now + pred.period * SLOT_MS;
        if next < self.sc.t1_ms {
            ag.schedule_at(crate::engine::SimTime(next), Ev::Tick);
        }
        let reb = self.sc.rebalance.as_ref().ok_or("predictive rebalancing without inputs")?;
        let min = self.cfg.battery.min_level;
        let idle: Vec<IdleBike> = self
            .bikes
            .iter()
            .enumerate()
            .filter(|(_, b)| b.activity == Activity::Idle && b.soc >= min)
            .map(|(id, b)| IdleBike {
                id: id as u32,
                cell: reb.grid.node_cell(b.node),
                location: self.sc.location(b.node),
            })
            .collect();
        let now_slot = slot_of(now);
        let forecast = reb.predictor.forecast(now_slot, now_slot + pred.ahead);
        let lambda = pred.lambda_mm.unwrap_or_else(|| default_lambda(&reb.costs));
        let (_, moves) =
            plan_moves(&idle, &forecast.demand, &reb.costs, lambda, &self.anchor_locs).map_err(|e| e.to_string())?;
        let mut go = Vec::with_capacity(moves.len());
        for m in &moves {
            let b = self.bikes[m.bike as usize];
            let target = reb.anchors[m.to_cell as usize];
            let mm = self.dist(b.node, target)?;
            // A move the battery cannot finish is dropped.
            if mm as f64 <= self.cfg.battery.range_mm(b.soc) {
                go.push((m.bike, target, mm));
            }
        }
        self.rec(now, Record::Tick { moves: go.len() as u32 })?;
        for (bike, node, mm) in go {
            self.set_activity(now, bike, Activity::Rebalancing)?;
            let handle = ag.schedule(leg_ms(mm, self.cfg.autonomous_speed_kmh), Ev::Relocated { bike, node, mm });
            if pred.claim_en_route {
                let from = self.bikes[bike as usize].node;
                let route = self.sc.router.route(from, node).ok_or("rebalancing route vanished")?;
                let cum_mm = route.cumulative_mm(&self.sc.net);
                self.legs.insert(bike, Leg { handle, start_ms: now, nodes: route.nodes, cum_mm, reached: 0 });
            } else {
                self.available.remove(bike);
            }
        }
        Ok(())
    }

    /// Moves every claimable rebalancing bike to the last route node it has
    /// reached by `now`, logging the distance covered since the last update.
    fn advance_legs(&mut self, now: u64) -> Res {
        let mut moved = Vec::new();
        for (&bike, leg) in self.legs.iter_mut() {
            let covered = (now - leg.start_ms) as f64 * self.cfg.autonomous_speed_kmh / 3.6;
            let at = leg.cum_mm.iter().rposition(|&c| c as f64 <= covered).unwrap_or(0);
            if at > leg.reached {
                moved.push((bike, leg.nodes[at], leg.cum_mm[at] - leg.cum_mm[leg.reached]));
                leg.reached = at;
            }
        }
        for (bike, node, mm) in moved {
            self.drive(now, bike, OdoClass::Rebalancing, mm)?;
            self.bikes[bike as usize].node = node;
            self.available.remove(bike);
            self.available.insert(bike, self.sc.location(node));
        }
        Ok(())
    }

    pub(super) fn au_relocated(&mut self, now: u64, bike: u32, node: NodeId, mm: u64, ag: &mut dyn Agenda<Ev>) -> Res {
        let done = match self.legs.remove(&bike) {
            Some(leg) => {
                self.available.remove(bike);
                leg.cum_mm[leg.reached]
            }
            None => 0,
        };
        self.drive(now, bike, OdoClass::Rebalancing, mm - done)?;
        self.bikes[bike as usize].node = node;
        self.battery_check(now, bike, ag)
    }
}
