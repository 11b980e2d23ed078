package selectq

type Dispatcher struct {
	inbox chan string
	done  chan bool
}

func NewDispatcher() *Dispatcher {
	return &Dispatcher{inbox: make(chan string, 8), done: make(chan bool, 8)}
}

func (d *Dispatcher) Dispatch(job string) {
	go d.deliver(job)
}

func (d *Dispatcher) deliver(job string) {
	d.inbox <- job
	d.done <- true
}

func (d *Dispatcher) Drain() string {
	select {
	case j := <-d.inbox:
		return j
	default:
		return ""
	}
}

func (d *Dispatcher) Wait() {
	<-d.done
}
