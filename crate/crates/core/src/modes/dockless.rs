use super::world::{leg_ms, Ev, Res, UserIdx, World};
use super::LB_MM_PER_M;
use crate::engine::Agenda;
use crate::geo::NodeId;
use crate::metrics::{Activity, UnservedReason};

impl World<'_> {
    /// Walks toward the nearest free bike (road distance) inside the walk radius.
    pub(super) fn dl_seek(&mut self, now: u64, u: UserIdx, ag: &mut dyn Agenda<Ev>) -> Res {
        let pos = self.users[u as usize].pos;
        let p = self.sc.location(pos);
        let found = self.available.nearest_by(&p, Some(self.cfg.walk_radius_m), LB_MM_PER_M, |c| {
            self.sc.router.distance(pos, self.bikes[c.id as usize].node)
        });
        let Some((bike, mm)) = found else {
            return self.unserved(now, u, UnservedReason::NoBikes);
        };
        let ms = leg_ms(mm, self.cfg.walking_speed_kmh);
        self.users[u as usize].walk_origin_ms += ms;
        let node = self.bikes[bike as usize].node;
        ag.schedule(ms, Ev::AtBike { user: u, bike, node });
        Ok(())
    }

    pub(super) fn dl_at_bike(&mut self, now: u64, u: UserIdx, bike: u32, node: NodeId, ag: &mut dyn Agenda<Ev>) -> Res {
        self.users[u as usize].pos = node;
        let b = self.bikes[bike as usize];
        if b.activity != Activity::Idle || b.node != node {
            if self.give_up(now, u)? {
                return Ok(());
            }
            return self.dl_seek(now, u, ag);
        }
        self.available.remove(bike);
        self.set_activity(now, bike, Activity::InUse)?;
        let mm = self.dist(node, self.trip(u).destination)?;
        let ms = leg_ms(mm, self.cfg.riding_speed_kmh);
        let t = &mut self.users[u as usize];
        t.bike = bike;
        t.leg_mm = mm;
        t.ride_ms = ms;
        ag.schedule(ms, Ev::Dropoff { user: u });
        Ok(())
    }
}
